"""Ingest daily price panels and normalize them into comparable index levels.

Raw commodity prices are quoted in incompatible units, so ranks are only
meaningful after normalization: every asset trading on the start date is
rescaled to 1.0 there, and an asset that starts trading later is rescaled so
that its first log price equals the mean log price of the assets already in
the panel.  Normalization only shifts levels; log increments are untouched.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, IO[str]]


class PanelError(ValueError):
    """Base class for ingestion and normalization errors."""


class PanelParseError(PanelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class PanelValidationError(PanelError):
    def __init__(self, message: str, asset: str | None = None, date=None):
        self.asset = asset
        self.date = date
        super().__init__(message)


@dataclass(frozen=True)
class ColumnSchema:
    """Column names for the long layout (one row per date/asset/price)."""

    date: str = "date"
    asset: str = "asset"
    price: str = "price"
    exchange: str | None = "exchange"


@dataclass(frozen=True)
class RawPricePanel:
    """Native-unit prices on a date index; NaN where an asset has no quote.

    ``meta`` is indexed by asset and carries at least ``first_trade``; an
    ``exchange`` column is kept when the source provides one.
    """

    prices: pd.DataFrame
    meta: pd.DataFrame = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        prices = self.prices
        if not prices.index.is_monotonic_increasing or prices.index.has_duplicates:
            raise PanelValidationError("dates must be strictly increasing")
        values = prices.to_numpy(dtype=float)
        bad = ~np.isnan(values) & ~(values > 0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            asset, date = prices.columns[c], prices.index[r]
            raise PanelValidationError(
                f"non-positive price {values[r, c]!r} for asset {asset!r} on {_fmt_date(date)}",
                asset=str(asset),
                date=date,
            )
        first = prices.apply(pd.Series.first_valid_index)
        meta = self.meta
        if meta is None:
            meta = pd.DataFrame(index=prices.columns)
        else:
            meta = meta.reindex(prices.columns)
        meta = meta.copy()
        meta["first_trade"] = first
        if meta["first_trade"].isna().any():
            empty = meta.index[meta["first_trade"].isna()].tolist()
            raise PanelValidationError(f"assets without any observation: {empty}")
        object.__setattr__(self, "meta", meta)

    @property
    def dates(self) -> pd.Index:
        return self.prices.index

    @property
    def assets(self) -> list[str]:
        return [str(a) for a in self.prices.columns]

    @property
    def entry_dates(self) -> pd.Series:
        return self.meta["first_trade"]


@dataclass(frozen=True)
class PricePanel:
    """Normalized, gap-filled prices.

    ``entry_dates`` holds the date from which each asset is part of the
    normalized panel: the normalization start for assets already trading
    then, the first quote for later entrants.
    """

    prices: pd.DataFrame
    entry_dates: pd.Series
    start_date: object = None
    meta: pd.DataFrame | None = None

    @property
    def dates(self) -> pd.Index:
        return self.prices.index

    @property
    def assets(self) -> list[str]:
        return [str(a) for a in self.prices.columns]

    def values(self) -> np.ndarray:
        return self.prices.to_numpy(dtype=float)

    def present(self) -> np.ndarray:
        return ~np.isnan(self.values())

    def to_raw(self) -> RawPricePanel:
        return RawPricePanel(self.prices, self.meta)

    def to_csv(self, path: Source) -> None:
        write_wide(self.prices, path)


def _fmt_date(d) -> str:
    if isinstance(d, pd.Timestamp):
        return d.strftime("%Y-%m-%d")
    return str(d)


def _parse_date(text: str, line: int) -> pd.Timestamp:
    try:
        return pd.Timestamp(text.strip())
    except (ValueError, TypeError) as exc:
        raise PanelParseError(f"bad date {text!r}", line) from exc


def _parse_price(text: str, line: int) -> float:
    text = text.strip()
    if text == "" or text.upper() in {"NA", "NAN"}:
        return math.nan
    try:
        return float(text)
    except ValueError as exc:
        raise PanelParseError(f"bad price {text!r}", line) from exc


def _open(source: Source):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def load_raw_panel(
    source: Source,
    layout: str = "long",
    schema: ColumnSchema | None = None,
    delimiter: str = ",",
) -> RawPricePanel:
    """Read a delimited price file.

    ``layout="long"`` expects one row per (date, asset, price) with column
    names from ``schema``; ``layout="wide"`` expects a date column followed by
    one column per asset, blank cells meaning no quote.  Interior gaps are
    left as NaN; call :func:`align_calendar` to fill them.
    """
    schema = schema or ColumnSchema()
    fh, close = _open(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelParseError("empty input", 1) from None
        if layout == "long":
            prices, meta = _read_long(reader, header, schema)
        elif layout == "wide":
            prices, meta = _read_wide(reader, header, schema)
        else:
            raise ValueError(f"unknown layout {layout!r}")
    finally:
        if close:
            fh.close()
    return RawPricePanel(prices, meta)


def _read_long(reader, header, schema):
    try:
        di, ai, pi = (header.index(schema.date), header.index(schema.asset), header.index(schema.price))
    except ValueError:
        raise PanelParseError(
            f"header must contain {schema.date!r}, {schema.asset!r}, {schema.price!r}", 1
        ) from None
    ei = header.index(schema.exchange) if schema.exchange and schema.exchange in header else None
    records: dict[tuple[pd.Timestamp, str], float] = {}
    exchange: dict[str, str] = {}
    width = len(header)
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise PanelParseError(f"expected {width} fields, got {len(row)}", line)
        date = _parse_date(row[di], line)
        asset = row[ai].strip()
        if not asset:
            raise PanelParseError("empty asset identifier", line)
        price = _parse_price(row[pi], line)
        if math.isnan(price):
            continue
        if not price > 0:
            raise PanelValidationError(
                f"non-positive price {price!r} for asset {asset!r} on {_fmt_date(date)} (line {line})",
                asset=asset,
                date=date,
            )
        key = (date, asset)
        if key in records:
            raise PanelParseError(f"duplicate quote for {asset!r} on {_fmt_date(date)}", line)
        records[key] = price
        if ei is not None and row[ei].strip():
            exchange.setdefault(asset, row[ei].strip())
    if not records:
        raise PanelParseError("no price rows")
    s = pd.Series(records)
    s.index.names = ["date", "asset"]
    prices = s.unstack("asset").sort_index()
    prices.index.name = "date"
    # keep first-seen asset order stable: sort columns by first trade, then name
    first = prices.apply(pd.Series.first_valid_index)
    order = sorted(prices.columns, key=lambda a: (first[a], a))
    prices = prices[order]
    prices.columns.name = None
    meta = pd.DataFrame(index=prices.columns)
    if exchange:
        meta["exchange"] = pd.Series(exchange)
    return prices, meta


def _read_wide(reader, header, schema):
    if len(header) < 2:
        raise PanelParseError("wide layout needs a date column and at least one asset", 1)
    di = header.index(schema.date) if schema.date in header else 0
    assets = [h for i, h in enumerate(header) if i != di]
    cols = [i for i in range(len(header)) if i != di]
    dates, rows = [], []
    seen = set()
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelParseError(f"expected {len(header)} fields, got {len(row)}", line)
        date = _parse_date(row[di], line)
        if date in seen:
            raise PanelParseError(f"duplicate date {_fmt_date(date)}", line)
        seen.add(date)
        vals = [_parse_price(row[i], line) for i in cols]
        for a, v in zip(assets, vals):
            if not math.isnan(v) and not v > 0:
                raise PanelValidationError(
                    f"non-positive price {v!r} for asset {a!r} on {_fmt_date(date)} (line {line})",
                    asset=a,
                    date=date,
                )
        dates.append(date)
        rows.append(vals)
    if not rows:
        raise PanelParseError("no price rows")
    prices = pd.DataFrame(rows, index=pd.DatetimeIndex(dates, name="date"), columns=assets).sort_index()
    return prices, pd.DataFrame(index=prices.columns)


def align_calendar(panel: RawPricePanel) -> RawPricePanel:
    """Forward-fill interior gaps on the union calendar.

    Cells before an asset's first quote stay NaN.
    """
    filled = panel.prices.ffill()
    return RawPricePanel(filled, panel.meta.drop(columns="first_trade"))


def _resolve_start(index: pd.Index, start_date) -> int:
    if start_date is None:
        return 0
    start = pd.Timestamp(start_date) if isinstance(index, pd.DatetimeIndex) else start_date
    if start < index[0] and start not in index:
        raise PanelError(f"start date {_fmt_date(start)} precedes the first observation {_fmt_date(index[0])}")
    pos = int(index.searchsorted(start, side="left"))
    if pos >= len(index):
        raise PanelError(f"start date {_fmt_date(start)} is after the last observation")
    return pos


def normalize_panel(panel: RawPricePanel | PricePanel, start_date=None) -> PricePanel:
    """Equalize levels on ``start_date`` and seat later entrants at the mean log price.

    A start date that is not a trading date rolls forward to the next one.
    Interior gaps are forward-filled first.
    """
    raw = panel.prices.ffill()
    meta = panel.meta
    pos = _resolve_start(raw.index, start_date)
    raw = raw.iloc[pos:]
    start = raw.index[0]
    values = raw.to_numpy(dtype=float)
    present0 = ~np.isnan(values[0])
    if present0.sum() < 2:
        raise PanelError(f"fewer than 2 assets trading on start date {_fmt_date(start)}")
    out = np.full_like(values, np.nan)
    out[:, present0] = values[:, present0] / values[0, present0]
    entry_pos = np.zeros(values.shape[1], dtype=int)
    placed = present0.copy()

    later = [j for j in range(values.shape[1]) if not present0[j]]
    firsts = {}
    for j in later:
        valid = np.flatnonzero(~np.isnan(values[:, j]))
        if valid.size:
            firsts[j] = int(valid[0])
    dropped = [raw.columns[j] for j in later if j not in firsts]
    if dropped:
        logger.warning("assets with no data on or after %s dropped: %s", _fmt_date(start), dropped)
    for j in sorted(firsts, key=lambda j: (firsts[j], j)):
        d = firsts[j]
        # only assets already in the panel before d set the entry level
        peers = placed & (entry_pos < d)
        target = float(np.mean(np.log(out[d, peers])))
        out[:, j] = values[:, j] * math.exp(target - math.log(values[d, j]))
        entry_pos[j] = d
        placed[j] = True

    keep = placed
    cols = raw.columns[keep]
    prices = pd.DataFrame(out[:, keep], index=raw.index, columns=cols)
    entry = pd.Series([raw.index[entry_pos[j]] for j in np.flatnonzero(keep)], index=cols, name="entry_date")
    if meta is not None:
        meta = meta.reindex(cols)
    return PricePanel(prices=prices, entry_dates=entry, start_date=start, meta=meta)


def normalize_window(panel: RawPricePanel | PricePanel, start_date, end_date=None) -> PricePanel:
    """Normalize and then truncate at ``end_date`` (inclusive)."""
    norm = normalize_panel(panel, start_date)
    if end_date is None:
        return norm
    prices = norm.prices.loc[: pd.Timestamp(end_date)]
    return PricePanel(prices, norm.entry_dates, norm.start_date, norm.meta)


# ---------------------------------------------------------------------------
# Wide-format text I/O
# ---------------------------------------------------------------------------


def format_number(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.15g}"


def write_wide(prices: pd.DataFrame, path: Source) -> None:
    from rankeffect.io import atomic_writer

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([prices.index.name or "date", *map(str, prices.columns)])
        for idx, row in zip(prices.index, prices.to_numpy(dtype=float)):
            w.writerow([_fmt_date(idx), *(format_number(v) for v in row)])

    if hasattr(path, "write"):
        emit(path)
    else:
        with atomic_writer(path) as fh:
            emit(fh)


def read_price_panel(source: Source, start_date=None) -> PricePanel:
    """Read a wide normalized panel back (entry dates from first quotes)."""
    raw = load_raw_panel(source, layout="wide")
    prices = raw.prices
    entry = raw.entry_dates.rename("entry_date")
    start = start_date if start_date is not None else prices.index[0]
    return PricePanel(prices, entry, start, raw.meta.drop(columns="first_trade"))


def panel_from_text(text: str, layout: str = "long", **kwargs) -> RawPricePanel:
    return load_raw_panel(io.StringIO(text), layout=layout, **kwargs)


def long_rows(panel: RawPricePanel | PricePanel) -> Iterable[tuple[str, str, float]]:
    """Yield (date, asset, price) rows for the long layout."""
    for date, row in panel.prices.iterrows():
        for asset, v in row.items():
            if not np.isnan(v):
                yield _fmt_date(date), str(asset), float(v)


def write_long(panel: RawPricePanel | PricePanel, path: Source) -> None:
    from rankeffect.io import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset", "price"])
        for d, a, v in long_rows(panel):
            w.writerow([d, a, format_number(v)])


def read_any(path: Path | str, layout: str = "long", schema: ColumnSchema | None = None) -> RawPricePanel:
    return align_calendar(load_raw_panel(path, layout=layout, schema=schema))
