"""Return statistics, counterfactual relative prices, the value anomaly and OLS.

Monthly returns are plain decimals on input (0.01 is one percent).  Reports
show annualized means and standard deviations in percent per year, with
Sharpe ratios computed on the same series and no risk-free leg, so a Sharpe
ratio of a relative-return series is the mean excess return over its
volatility.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats as sps

from rankeffect.decomp import DecompositionSeries
from rankeffect.panel import PricePanel, RawPricePanel, normalize_panel
from rankeffect.portfolio import (
    PortfolioSpec,
    month_end_mask,
    rebalance_schedule,
    run_backtest,
)
from rankeffect.ranks import rank_matrix

log = logging.getLogger(__name__)

MONTHS_PER_YEAR = 12


class AnalyticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Summary statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Date window closed on the left; ``end=None`` runs to the last observation."""

    start: pd.Timestamp | None
    end: pd.Timestamp | None
    label: str

    def select(self, series: pd.Series) -> pd.Series:
        idx = series.index
        keep = np.ones(len(idx), dtype=bool)
        if self.start is not None:
            keep &= idx >= self.start
        if self.end is not None:
            keep &= idx < self.end
        return series[keep]


def full_window(index: pd.DatetimeIndex) -> Window:
    return Window(None, None, f"{index[0].year}-{index[-1].year}")


def decade_windows(index: pd.DatetimeIndex) -> list[Window]:
    """The full sample followed by calendar decades, trimmed to the sample.

    A sample running from 1974 to 2018 gives 1974-2018, 1974-1980,
    1980-1990, 1990-2000, 2000-2010 and 2010-2018.  A sample inside one
    decade gets the full-sample window only.
    """
    first, last = index[0].year, index[-1].year
    out = [full_window(index)]
    edges = [first] + [y for y in range(first - first % 10 + 10, last + 1, 10) if y > first]
    if len(edges) == 1:
        return out  # a single decade would repeat the full sample
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        label = f"{lo}-{hi if hi is not None else last}"
        start = None if i == 0 else pd.Timestamp(year=lo, month=1, day=1)
        end = None if hi is None else pd.Timestamp(year=hi, month=1, day=1)
        out.append(Window(start, end, label))
    return out


def annualize(returns: Sequence[float]) -> tuple[float, float, float]:
    """(mean %/yr, stdev %/yr, Sharpe) of a monthly series.

    The Sharpe ratio is NaN when the standard deviation is zero.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise AnalyticsError("need at least 2 monthly observations")
    mean = r.mean() * MONTHS_PER_YEAR
    std = r.std(ddof=1) * math.sqrt(MONTHS_PER_YEAR)
    if std < 1e-14 * max(1.0, abs(mean)):
        std = 0.0
    sharpe = mean / std if std > 0 else float("nan")
    return 100.0 * mean, 100.0 * std, sharpe


def sharpe_ratio(returns: Sequence[float]) -> float:
    return annualize(returns)[2]


@dataclass(frozen=True)
class StatsReport:
    """Annualized statistics per window and series, plus correlations.

    ``table`` has a (window, series) row index and columns ``mean``
    (%/yr), ``std`` (%/yr), ``sharpe`` and ``n_months``.
    """

    table: pd.DataFrame
    correlations: pd.DataFrame

    def get(self, window: str, series: str) -> pd.Series:
        return self.table.loc[(window, series)]

    @property
    def windows(self) -> list[str]:
        return list(dict.fromkeys(self.table.index.get_level_values(0)))

    @property
    def series(self) -> list[str]:
        return list(dict.fromkeys(self.table.index.get_level_values(1)))

    def to_frame(self) -> pd.DataFrame:
        return self.table.reset_index()


def stats(
    returns: Mapping[str, pd.Series] | pd.DataFrame,
    windows: Iterable[Window] | None = None,
) -> StatsReport:
    """Annualized mean, standard deviation and Sharpe ratio per window.

    ``returns`` maps a series name to monthly returns on a date index.  The
    default windows are the full sample plus calendar decades.
    """
    frame = pd.DataFrame(dict(returns)) if not isinstance(returns, pd.DataFrame) else returns
    if frame.empty:
        raise AnalyticsError("no return series given")
    windows = list(decade_windows(frame.index) if windows is None else windows)
    if not windows:
        raise AnalyticsError("no windows given")
    rows, keys = [], []
    for w in windows:
        for name in frame.columns:
            r = w.select(frame[name].dropna())
            if len(r) < 2:
                raise AnalyticsError(f"window {w.label} has {len(r)} observations of {name}")
            mean, std, sharpe = annualize(r.to_numpy())
            rows.append((mean, std, sharpe, len(r)))
            keys.append((w.label, name))
    index = pd.MultiIndex.from_tuples(keys, names=["window", "series"])
    table = pd.DataFrame(rows, index=index, columns=["mean", "std", "sharpe", "n_months"])
    return StatsReport(table, frame.corr())


def relative_returns(a: pd.Series, b: pd.Series) -> pd.Series:
    """Monthly excess return of ``a`` over ``b`` on their shared months."""
    a, b = a.align(b, join="inner")
    return a - b


# ---------------------------------------------------------------------------
# Counterfactual relative prices
# ---------------------------------------------------------------------------

_MODES = {
    "small_vs_market": "small_vs_market",
    "small-vs-market": "small_vs_market",
    "sm": "small_vs_market",
    "small_vs_big": "small_vs_big",
    "small-vs-big": "small_vs_big",
    "sb": "small_vs_big",
    "big_vs_market": "big_vs_market",
    "big-vs-market": "big_vs_market",
    "bm": "big_vs_market",
}


@dataclass(frozen=True)
class CounterfactualResult:
    """Terminal relative price that would have left the relative value at zero.

    For small against market the price is the bottom-ranked mass; for small
    against big it is the ratio of bottom- to top-ranked mass.  The
    crossover term is held at its realized value.
    """

    mode: str
    date: object
    initial: float
    actual: float
    counterfactual: float
    cum_adj_local_time: float

    @property
    def ratio(self) -> float:
        return self.actual / self.counterfactual

    def relative_log_value(self, terminal: float | None = None) -> float:
        """Relative log value implied by the identity at a given terminal price."""
        x = self.counterfactual if terminal is None else terminal
        return self.cum_adj_local_time + (math.log(x) - math.log(self.initial))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[self.mode, self.date, self.initial, self.actual, self.counterfactual, self.ratio]],
            columns=["mode", "date", "initial", "actual", "counterfactual", "actual_over_counterfactual"],
        )


def counterfactual_theta(d: DecompositionSeries, mode: str | None = None) -> CounterfactualResult:
    """Solve the decomposition identity for a zero terminal relative value."""
    key = _MODES.get(mode or d.label)
    if key is None:
        raise AnalyticsError(f"unknown counterfactual mode {mode or d.label!r}")
    if d.label and d.label != key:
        raise AnalyticsError(f"decomposition is {d.label}, not {key}")
    adj = float(d.cum_adj_local_time[-1])
    log0 = float(d.log_rel_price[0])
    return CounterfactualResult(
        mode=key,
        date=d.dates[-1],
        initial=math.exp(log0),
        actual=math.exp(float(d.log_rel_price[-1])),
        counterfactual=math.exp(log0 - adj),
        cum_adj_local_time=adj,
    )


def counterfactual_round_trip(d: DecompositionSeries, result: CounterfactualResult) -> float:
    """Relative log value after substituting the counterfactual into ``d``.

    Rebuilds the terminal identity from the series itself: the realized
    crossover term plus the log change from the initial price to the
    counterfactual one.  Zero up to rounding.
    """
    rel = math.log(result.counterfactual) - float(d.log_rel_price[0])
    return float(d.cum_adj_local_time[-1]) + rel


# ---------------------------------------------------------------------------
# Value anomaly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueRanking:
    """One rebalance date's value ratios and the two halves."""

    date: pd.Timestamp
    ratio: pd.Series
    high_value: list[str]
    low_value: list[str]


def _lookback_bounds(dates: pd.DatetimeIndex, lookback: tuple[float, float]):
    near, far = lookback
    lo = dates - pd.DateOffset(months=int(round(12 * far)))
    hi = dates - pd.DateOffset(months=int(round(12 * near)))
    return lo, hi


def value_ratios(panel: PricePanel, lookback: tuple[float, float] = (4.5, 5.5)) -> pd.DataFrame:
    """Price over its average across the lookback window, per date and asset.

    The average is the arithmetic mean of prices on the trading days between
    ``t - lookback[1]`` and ``t - lookback[0]`` years, both ends included.
    An asset qualifies only once it has prices back to the far end of the
    window; other cells are NaN.
    """
    if not isinstance(panel.dates, pd.DatetimeIndex):
        raise AnalyticsError("value ratios need a date index")
    near, far = lookback
    if not 0 <= near < far:
        raise AnalyticsError("lookback must satisfy 0 <= near < far")
    p = panel.values()
    dates = panel.dates
    lo, hi = _lookback_bounds(dates, lookback)
    a = dates.searchsorted(lo, side="left")
    b = dates.searchsorted(hi, side="right")
    present = ~np.isnan(p)
    csum = np.vstack([np.zeros(p.shape[1]), np.cumsum(np.nan_to_num(p), axis=0)])
    ccount = np.vstack([np.zeros(p.shape[1]), np.cumsum(present, axis=0)])
    total = csum[b] - csum[a]
    count = ccount[b] - ccount[a]
    full = (count == (b - a)[:, None]) & ((b > a) & (dates[0] <= lo))[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = p / (total / count)
    ratio = np.where(full & present, ratio, np.nan)
    return pd.DataFrame(ratio, index=dates, columns=panel.assets)


def value_ranking(panel: PricePanel, date, lookback: tuple[float, float] = (4.5, 5.5)) -> ValueRanking:
    """Split the qualifying assets at ``date`` into high- and low-value halves.

    Assets are ranked by their value ratio, highest first.  As with the
    rank portfolios the top ``floor(N / 2)`` form one half (low value:
    expensive against their past) and the rest form the other (high value).
    """
    ratios = value_ratios(panel, lookback)
    row = ratios.loc[pd.Timestamp(date)].dropna()
    if len(row) < 2:
        raise AnalyticsError(f"fewer than 2 qualifying assets at {date}")
    cols = list(row.index)
    perm = rank_matrix(row.to_numpy()[None, :])[0]
    c = len(row) // 2
    low = [cols[i] for i in perm[:c]]
    high = [cols[i] for i in perm[c:]]
    return ValueRanking(pd.Timestamp(date), row, high, low)


@dataclass(frozen=True)
class ValueAnomaly:
    """Monthly returns of the high- and low-value halves and their difference."""

    high: pd.Series
    low: pd.Series
    skipped: list

    @property
    def excess(self) -> pd.Series:
        return (self.high - self.low).rename("value_anomaly")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"high_value": self.high, "low_value": self.low, "value_anomaly": self.excess})
        frame.index.name = "date"
        return frame


def value_anomaly_series(
    panel: PricePanel,
    lookback: tuple[float, float] = (4.5, 5.5),
    start=None,
    end=None,
) -> ValueAnomaly:
    """High-minus-low value returns with both halves price-weighted.

    Holdings are set on the first trading day of each month and kept for
    the month.  Months whose formation date has fewer than 2 qualifying
    assets are skipped with a warning.  Monthly returns run from month end
    to month end, the first one from the formation date.
    """
    ratios = value_ratios(panel, lookback)
    dates = panel.dates
    keep = np.ones(len(dates), dtype=bool)
    if start is not None:
        keep &= dates >= pd.Timestamp(start)
    if end is not None:
        keep &= dates <= pd.Timestamp(end)
    r = ratios.to_numpy()[keep]
    p = panel.values()[keep]
    dates = dates[keep]
    sched = rebalance_schedule(dates, "monthly")
    qualifying = (~np.isnan(r)).sum(axis=1)
    usable = sched & (qualifying >= 2)
    first = np.flatnonzero(usable)
    if not first.size:
        raise AnalyticsError("no month with 2 qualifying assets")
    skipped = [d for d in dates[sched & ~usable] if d > dates[first[0]]]
    for d in skipped:
        log.warning("value anomaly: fewer than 2 qualifying assets on %s, month skipped", d.date())
    lo_sel = first[0]
    dates, p, r, sched, usable = dates[lo_sel:], p[lo_sel:], r[lo_sel:], sched[lo_sel:], usable[lo_sel:]

    last = np.maximum.accumulate(np.where(sched, np.arange(len(dates)), 0))
    perm = rank_matrix(r[sched])
    counts = (~np.isnan(r[sched])).sum(axis=1)
    high_r = np.zeros((sched.sum(), p.shape[1]), dtype=bool)
    low_r = np.zeros_like(high_r)
    for i, cnt in enumerate(counts):
        if cnt < 2:
            continue
        c = cnt // 2
        low_r[i, perm[i, :c]] = True
        high_r[i, perm[i, c:cnt]] = True
    pos = np.cumsum(sched) - 1
    row_of = pos[last]
    held_high, held_low = high_r[row_of], low_r[row_of]
    valid = usable[last]

    ends = np.flatnonzero(month_end_mask(dates))
    base = np.r_[0, ends[:-1]]
    if ends[0] == 0:
        base, ends = base[1:], ends[1:]
    pz = np.nan_to_num(p)
    # a month counts only if every step in it was held under a valid formation
    bad = np.concatenate([[0], np.cumsum(~valid[:-1])])
    month_ok = bad[ends] == bad[base]

    def monthly(held):
        num = np.where(held[:-1], pz[1:], 0.0).sum(axis=1)
        den = np.where(held[:-1], pz[:-1], 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            growth = np.where(valid[:-1] & (den > 0), np.log(num / den), 0.0)
        lv = np.concatenate([[0.0], np.cumsum(growth)])
        out = np.expm1(lv[ends] - lv[base])
        return pd.Series(out[month_ok], index=dates[ends][month_ok])

    return ValueAnomaly(monthly(held_high), monthly(held_low), skipped)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def significance_stars(p_value: float) -> str:
    if p_value < 0.001:
        return "***"
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class RegressionResult:
    """Single-regressor OLS fit with homoskedastic standard errors."""

    intercept: float
    intercept_se: float
    slope: float
    slope_se: float
    r2: float
    adj_r2: float
    n_obs: int
    residuals: np.ndarray

    @property
    def dof(self) -> int:
        return self.n_obs - 2

    def _p(self, coef: float, se: float) -> float:
        if se == 0:
            return 0.0 if coef != 0 else 1.0
        return float(2 * sps.t.sf(abs(coef / se), self.dof))

    @property
    def intercept_p(self) -> float:
        return self._p(self.intercept, self.intercept_se)

    @property
    def slope_p(self) -> float:
        return self._p(self.slope, self.slope_se)

    @property
    def intercept_stars(self) -> str:
        return significance_stars(self.intercept_p)

    @property
    def slope_stars(self) -> str:
        return significance_stars(self.slope_p)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "estimate": [self.intercept, self.slope],
                "std_error": [self.intercept_se, self.slope_se],
                "p_value": [self.intercept_p, self.slope_p],
                "stars": [self.intercept_stars, self.slope_stars],
            },
            index=pd.Index(["intercept", "slope"], name="term"),
        )


def ols(y: Sequence[float], x: Sequence[float]) -> RegressionResult:
    """Regress ``y`` on a constant and ``x``."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise AnalyticsError("y and x must be 1-d and of equal length")
    n = len(y)
    if n < 3:
        raise AnalyticsError("need at least 3 observations")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 or np.allclose(x, x[0]):
        raise AnalyticsError("regressor has zero variance")
    design = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    a, b = float(coef[0]), float(coef[1])
    resid = y - design @ coef
    sse = float(resid @ resid)
    yc = y - y.mean()
    sst = float(yc @ yc)
    s2 = sse / (n - 2)
    slope_se = math.sqrt(s2 / sxx)
    intercept_se = math.sqrt(s2 * (1.0 / n + x.mean() ** 2 / sxx))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - 2)
    return RegressionResult(a, intercept_se, b, slope_se, r2, adj, n, resid)


# ---------------------------------------------------------------------------
# Start-date sweep
# ---------------------------------------------------------------------------


def quarterly_grid(raw: RawPricePanel, start=None, end=None, min_assets: int = 2) -> pd.DatetimeIndex:
    """First trading day of each quarter with at least ``min_assets`` trading."""
    dates = raw.dates
    counts = raw.prices.notna().sum(axis=1).to_numpy()
    q = dates.to_period("Q")
    first = np.r_[True, q[1:] != q[:-1]]
    mask = first & (counts >= min_assets)
    if start is not None:
        mask &= dates >= pd.Timestamp(start)
    if end is not None:
        mask &= dates <= pd.Timestamp(end)
    return dates[mask]


@dataclass(frozen=True)
class SweepConfig:
    wait_years: float = 5
    cutoff: int | str = "half"
    rebalance: str = "monthly"
    returns: str = "simple"
    end: object = None


def relative_sharpes(panel: PricePanel, cfg: SweepConfig = SweepConfig()) -> tuple[float, float]:
    """Sharpe ratios of small over market and small over big monthly returns."""
    kw = dict(end=cfg.end, rebalance=cfg.rebalance, wait_years=cfg.wait_years, returns=cfg.returns)
    m = run_backtest(panel, PortfolioSpec("market", cfg.cutoff), **kw).monthly_returns()
    s = run_backtest(panel, PortfolioSpec("small", cfg.cutoff), **kw).monthly_returns()
    b = run_backtest(panel, PortfolioSpec("big", cfg.cutoff), **kw).monthly_returns()
    return sharpe_ratio(relative_returns(s, m)), sharpe_ratio(relative_returns(s, b))


def _sweep_point(args) -> tuple:
    raw, date, cfg = args
    try:
        panel = normalize_panel(raw, date)
        sm, sb = relative_sharpes(panel, cfg)
        return date, sm, sb, ""
    except Exception as exc:  # one bad start date must not stop the grid
        return date, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class SweepResult:
    table: pd.DataFrame

    @property
    def average(self) -> tuple[float, float]:
        t = self.table
        return float(t["sharpe_vs_market"].mean()), float(t["sharpe_vs_big"].mean())


def start_date_sweep(
    raw: RawPricePanel,
    dates: Sequence | None = None,
    config: SweepConfig = SweepConfig(),
    workers: int = 1,
) -> SweepResult:
    """Rerun the full pipeline from each normalization start date.

    Each grid date goes through normalization, eligibility and the three
    backtests independently.  Failures are recorded in the ``error``
    column and leave NaN Sharpe ratios; the grid average skips them.
    """
    grid = quarterly_grid(raw) if dates is None else pd.DatetimeIndex(pd.to_datetime(list(dates)))
    jobs = [(raw, d, config) for d in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    for d, _, _, err in rows:
        if err:
            log.warning("sweep start %s failed: %s", pd.Timestamp(d).date(), err)
    table = pd.DataFrame(rows, columns=["start_date", "sharpe_vs_market", "sharpe_vs_big", "error"])
    return SweepResult(table)


# ---------------------------------------------------------------------------
# Increment variability
# ---------------------------------------------------------------------------


def variation_contrast(d: DecompositionSeries, stride: int = 1) -> tuple[float, float]:
    """Coefficients of variation of crossover and relative-price increments.

    ``stride`` aggregates steps before differencing, e.g. 10 steps of a
    tenth of a trading day give daily increments.
    """
    from rankeffect.decomp import coefficient_of_variation

    adj = d.cum_adj_local_time[::stride]
    rel = d.log_rel_price[::stride]
    return coefficient_of_variation(np.diff(adj)), coefficient_of_variation(np.diff(rel))


# ---------------------------------------------------------------------------
# Plain-text tables
# ---------------------------------------------------------------------------


def _cell(mean: float, std: float) -> str:
    return f"{mean:.2f}% ({std:.2f})"


def _sharpe(x: float) -> str:
    return "undefined" if not np.isfinite(x) else f"{x:.2f}"


def _render(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    cols = list(zip(*([header] + [list(r) for r in rows])))
    widths = [max(len(c) for c in col) for col in cols]
    fmt_row = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt_row(header), rule, *(fmt_row(r) for r in rows)]) + "\n"


def format_returns_table(report: StatsReport) -> str:
    """Average (standard deviation) per window and series."""
    header = ["", *report.series]
    rows = []
    for w in report.windows:
        rows.append([w, *(_cell(*report.get(w, s)[["mean", "std"]]) for s in report.series)])
    return _render(header, rows)


def format_relative_table(report: StatsReport) -> str:
    """Average (standard deviation) and Sharpe ratio per window and series."""
    header = [""]
    for s in report.series:
        header += [f"{s} avg (sd)", f"{s} Sharpe"]
    rows = []
    for w in report.windows:
        row = [w]
        for s in report.series:
            e = report.get(w, s)
            row += [_cell(e["mean"], e["std"]), _sharpe(e["sharpe"])]
        rows.append(row)
    return _render(header, rows)


def format_counterfactual_table(results: Sequence[CounterfactualResult]) -> str:
    header = ["", *(r.mode for r in results)]
    rows = [
        ["counterfactual", *(f"{r.counterfactual:.5f}" for r in results)],
        ["actual", *(f"{r.actual:.5f}" for r in results)],
    ]
    return _render(header, rows)


def format_regression_table(results: Mapping[str, RegressionResult]) -> str:
    names = list(results)
    header = ["", *names]
    rows = [["intercept", *(f"{r.intercept:.3f}{r.intercept_stars} ({r.intercept_se:.3f})" for r in results.values())]]
    for name in names:
        r = results[name]
        rows.append([name, *(f"{r.slope:.3f}{r.slope_stars} ({r.slope_se:.3f})" if k == name else "" for k in names)])
    rows.append(["adjusted R2", *(f"{r.adj_r2:.2f}" for r in results.values())])
    rows.append(["observations", *(str(r.n_obs) for r in results.values())])
    return _render(header, rows)
