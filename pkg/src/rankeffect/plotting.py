"""Static SVG charts.

Figures are built on :class:`matplotlib.figure.Figure` directly, so no
pyplot state or GUI backend is involved.  The SVG hash salt is fixed and
the date metadata is dropped, which makes reruns byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from rankeffect.decomp import DecompositionSeries
from rankeffect.io import atomic_writer
from rankeffect.portfolio import ValueSeries

_TITLES = {
    "small_vs_market": ("small", "market"),
    "big_vs_market": ("big", "market"),
    "small_vs_big": ("small", "big"),
}


def save_svg(fig: Figure, path) -> Path:
    """Write ``fig`` as SVG through an atomic rename."""
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "rankeffect", "svg.fonttype": "none"}):
        with atomic_writer(path, "wb") as fh:
            fig.savefig(fh, format="svg", metadata={"Date": None})
    return path


def _xaxis(dates) -> np.ndarray | pd.DatetimeIndex:
    return dates if isinstance(dates, pd.DatetimeIndex) else np.asarray(dates, dtype=float)


def values_figure(series: Mapping[str, ValueSeries]) -> Figure:
    """Cumulative log returns of each portfolio from its formation value."""
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    for name, vs in series.items():
        ax.plot(_xaxis(vs.dates), vs.log_value - vs.log_value[0], label=name, linewidth=1.0)
    ax.axhline(0.0, color="0.6", linewidth=0.6)
    ax.set_ylabel("cumulative log return")
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    return fig


def decomposition_figure(d: DecompositionSeries) -> Figure:
    """Relative log value with its crossover part above, relative price below."""
    fig = Figure(figsize=(8, 6))
    top, bottom = fig.subplots(2, 1, sharex=True)
    x = _xaxis(d.dates)
    a, b = _TITLES.get(d.label, ("portfolio", "benchmark"))
    top.plot(x, d.cum_abnormal_log, color="tab:blue", linewidth=1.0, label=f"log value, {a} over {b}")
    top.plot(x, d.cum_adj_local_time, color="tab:red", linestyle="--", linewidth=1.0, label="rank crossovers")
    top.axhline(0.0, color="0.6", linewidth=0.6)
    top.legend(loc="upper left", frameon=False)
    top.set_ylabel("cumulative log")
    bottom.plot(x, d.log_rel_price - d.log_rel_price[0], color="tab:green", linewidth=1.0)
    bottom.axhline(0.0, color="0.6", linewidth=0.6)
    bottom.set_ylabel("change in log relative price")
    fig.tight_layout()
    return fig


def sweep_figure(table: pd.DataFrame) -> Figure:
    """Relative Sharpe ratios by normalization start date."""
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    x = pd.DatetimeIndex(table["start_date"])
    ax.plot(x, table["sharpe_vs_market"], marker=".", linewidth=0.8, label="small over market")
    ax.plot(x, table["sharpe_vs_big"], marker=".", linewidth=0.8, label="small over big")
    ax.set_ylabel("Sharpe ratio")
    ax.set_xlabel("normalization start date")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    return fig


def panel_figure(prices: pd.DataFrame) -> Figure:
    """Log normalized prices of every asset."""
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    x = _xaxis(prices.index)
    for col in prices.columns:
        ax.plot(x, np.log(prices[col].to_numpy(dtype=float)), linewidth=0.6)
    ax.set_ylabel("log normalized price")
    fig.tight_layout()
    return fig
