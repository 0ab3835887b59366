"""File output helpers: atomic writes and fixed-precision CSV tables."""

from __future__ import annotations

import contextlib
import csv
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

SIG_DIGITS = 15


def fmt(x) -> str:
    """Render a cell: floats at 15 significant digits, NaN as empty."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return ""
        return f"{float(x):.{SIG_DIGITS}g}"
    if isinstance(x, (np.integer,)):
        return str(int(x))
    if isinstance(x, pd.Timestamp):
        return x.strftime("%Y-%m-%d")
    return str(x)


@contextlib.contextmanager
def atomic_writer(path, mode: str = "w"):
    """Write to a temp file in the target directory, rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        kwargs = {"newline": "", "encoding": "utf-8"} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return Path(path)


def write_frame(path, frame: pd.DataFrame, index_label: str | None = None) -> Path:
    header = list(map(str, frame.columns))
    rows: Iterable[Sequence]
    if index_label is not None:
        header = [index_label, *header]
        rows = ([idx, *vals] for idx, vals in zip(frame.index, frame.itertuples(index=False)))
    else:
        rows = frame.itertuples(index=False)
    return write_table(path, header, rows)
