"""Self-financing market, small, big and top-n restricted portfolios.

Every portfolio here holds *equal numbers of shares* of the assets in its
current holding set, which makes it price-weighted within that set:

    market        all eligible assets
    small         ranks c+1..N of the eligible assets
    big           ranks 1..c
    market_prime  ranks 1..n (the tradable top n)
    small_prime   ranks c+1..n

At a rebalance the share count is reset to ``V / sum(prices in set)`` so the
value is conserved exactly.  Between rebalances shares are frozen and the
value moves only with prices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import pandas as pd

from rankeffect.panel import PricePanel
from rankeffect.ranks import RankedSnapshot, rank_matrix

KINDS = ("market", "small", "big", "market_prime", "small_prime")


class PortfolioError(ValueError):
    pass


@dataclass(frozen=True)
class PortfolioSpec:
    """What to hold.

    ``cutoff`` is ``"half"`` (c = floor(N / 2) of the eligible count) or an
    explicit integer.  ``tradable`` is the top-n tradable count used by the
    primed kinds.
    """

    kind: str = "market"
    cutoff: int | str = "half"
    tradable: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PortfolioError(f"kind must be one of {KINDS}")
        if self.kind in ("market_prime", "small_prime") and self.tradable is None:
            raise PortfolioError(f"{self.kind} needs a tradable count")

    def cutoff_for(self, n: int) -> int:
        c = n // 2 if self.cutoff == "half" else int(self.cutoff)
        if self.kind in ("market", "market_prime"):
            return c
        hi = n if self.kind == "big" else n - 1
        if self.kind == "small_prime":
            hi = min(hi, int(self.tradable) - 1)
        if not 1 <= c <= hi:
            raise PortfolioError(f"cutoff c={c} invalid for {self.kind} with N={n}")
        return c

    def holding_ranks(self, n: int) -> tuple[int, int]:
        """Half-open 0-based rank range [lo, hi) held when N = ``n``."""
        if self.kind == "market":
            return 0, n
        c = self.cutoff_for(n)
        if self.kind == "small":
            return c, n
        if self.kind == "big":
            return 0, c
        tn = int(self.tradable)
        if tn > n:
            raise PortfolioError(f"tradable n={tn} exceeds N={n}")
        if self.kind == "market_prime":
            return 0, tn
        return c, tn


def holding_mask(spec: PortfolioSpec, prices: np.ndarray, eligible: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of the assets ``spec`` holds at one price vector."""
    p = np.asarray(prices, dtype=float)
    elig = ~np.isnan(p) if eligible is None else (np.asarray(eligible, bool) & ~np.isnan(p))
    key = np.where(elig, p, np.nan)
    perm = rank_matrix(key[None, :])[0]
    n = int(elig.sum())
    lo, hi = spec.holding_ranks(n)
    mask = np.zeros(len(p), dtype=bool)
    mask[perm[lo:hi]] = True
    return mask


# ---------------------------------------------------------------------------
# Stateful single-step API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PortfolioState:
    date: Any
    shares: np.ndarray
    value: float
    last_rebalance: Any
    eligible: np.ndarray
    history: tuple = ()

    @property
    def held(self) -> np.ndarray:
        return self.shares > 0

    def weights(self, prices: np.ndarray) -> np.ndarray:
        p = np.nan_to_num(np.asarray(prices, dtype=float))
        return self.shares * p / self.value


def _as_prices(snapshot_or_prices) -> tuple[np.ndarray, Any]:
    if isinstance(snapshot_or_prices, RankedSnapshot):
        s = snapshot_or_prices
        p = np.empty(s.n_assets)
        p[s.perm] = s.ranked_prices
        return p, s.date
    return np.asarray(snapshot_or_prices, dtype=float), None


def initial_portfolio(spec: PortfolioSpec, snapshot, date=None, eligible=None) -> PortfolioState:
    """Form ``spec`` with initial value equal to the sum of eligible prices."""
    p, d = _as_prices(snapshot)
    date = d if date is None else date
    elig = ~np.isnan(p) if eligible is None else (np.asarray(eligible, bool) & ~np.isnan(p))
    if elig.sum() < 2:
        raise PortfolioError("need at least 2 eligible assets")
    mask = holding_mask(spec, p, elig)
    pz = np.where(elig, p, 0.0)
    v0 = float(pz.sum())
    shares = np.where(mask, v0 / pz[mask].sum(), 0.0)
    return PortfolioState(date, shares, v0, date, elig, ((date, "form"),))


def evolve(state: PortfolioState, snapshot, date=None) -> PortfolioState:
    """Re-price frozen holdings."""
    p, d = _as_prices(snapshot)
    date = d if date is None else date
    if len(p) != len(state.shares):
        raise PortfolioError("asset set mismatch")
    if np.any(np.isnan(p[state.held])):
        raise PortfolioError("held asset has no price")
    value = float(np.dot(state.shares, np.nan_to_num(p)))
    return replace(state, date=date, value=value)


def rebalance_if_due(
    state: PortfolioState,
    snapshot,
    spec: PortfolioSpec,
    due: bool = True,
    date=None,
    eligible=None,
) -> PortfolioState:
    """Reset shares when the held set or the eligible count changed.

    ``due`` marks a scheduled rebalance date (first trading day of a month in
    the empirical setup); on other dates the state is returned unchanged.
    The market portfolio only trades when the eligible set changes.
    """
    if not due:
        return state
    p, d = _as_prices(snapshot)
    date = d if date is None else date
    elig = ~np.isnan(p) if eligible is None else (np.asarray(eligible, bool) & ~np.isnan(p))
    mask = holding_mask(spec, p, elig)
    n_changed = int(elig.sum()) != int(state.eligible.sum()) or np.any(elig != state.eligible)
    members_changed = np.any(mask != state.held)
    if not (n_changed or members_changed):
        return state
    pz = np.nan_to_num(p)
    value = float(np.dot(state.shares, pz))
    shares = np.where(mask, value / pz[mask].sum(), 0.0)
    reason = "universe" if n_changed else "rank"
    return PortfolioState(date, shares, value, date, elig, state.history + ((date, reason),))


# ---------------------------------------------------------------------------
# Calendar and eligibility
# ---------------------------------------------------------------------------


def anniversaries(entry: pd.Series, wait_years: float) -> pd.Series:
    if wait_years == 0:
        return entry
    if len(entry) and isinstance(entry.iloc[0], pd.Timestamp):
        if float(wait_years).is_integer():
            return entry + pd.DateOffset(years=int(wait_years))
        return entry + pd.DateOffset(months=int(round(12 * wait_years)))
    return entry + wait_years


def eligible_assets(panel: PricePanel, date, wait_years: float = 5) -> list[str]:
    """Assets whose entry date plus the wait is on or before ``date``."""
    ann = anniversaries(panel.entry_dates, wait_years)
    return [a for a in panel.assets if ann[a] <= date]


def eligibility_matrix(panel: PricePanel, wait_years: float = 5) -> np.ndarray:
    ann = anniversaries(panel.entry_dates, wait_years).reindex(panel.prices.columns)
    dates = panel.dates
    if isinstance(dates, pd.DatetimeIndex):
        a = ann.to_numpy(dtype="datetime64[ns]")
        d = dates.to_numpy(dtype="datetime64[ns]")
    else:
        a = ann.to_numpy(dtype=float)
        d = np.asarray(dates, dtype=float)
    return (d[:, None] >= a[None, :]) & panel.present()


def rebalance_schedule(dates: pd.Index, freq: str = "monthly") -> np.ndarray:
    """Boolean mask of scheduled rebalance dates; the first date is always set."""
    n = len(dates)
    if freq == "step":
        return np.ones(n, dtype=bool)
    if freq == "never":
        mask = np.zeros(n, dtype=bool)
    elif freq == "monthly":
        if not isinstance(dates, pd.DatetimeIndex):
            raise PortfolioError("monthly rebalancing needs a date index")
        per = dates.to_period("M")
        mask = np.r_[True, per[1:] != per[:-1]]
    else:
        raise PortfolioError(f"unknown rebalance frequency {freq!r}")
    if n:
        mask[0] = True
    return mask


def month_end_mask(dates: pd.DatetimeIndex) -> np.ndarray:
    per = dates.to_period("M")
    return np.r_[per[1:] != per[:-1], True]


# ---------------------------------------------------------------------------
# Vectorised backtest
# ---------------------------------------------------------------------------


@dataclass
class ValueSeries:
    """Daily log value with the holdings that produced it.

    ``held`` and ``universe`` are (dates x assets) masks in force *after*
    each date's rebalance, i.e. over the following period.
    """

    dates: pd.Index
    log_value: np.ndarray
    held: np.ndarray
    universe: np.ndarray
    cutoff: np.ndarray
    rebalanced: np.ndarray
    assets: list[str]
    spec: PortfolioSpec | None = None
    returns: str = "simple"

    @property
    def value(self) -> np.ndarray:
        return np.exp(self.log_value)

    def shares(self, prices: np.ndarray) -> np.ndarray:
        p = np.nan_to_num(prices)
        basket = np.where(self.held, p, 0.0).sum(axis=1)
        per = self.value / basket
        return np.where(self.held, per[:, None], 0.0)

    def monthly_returns(self, kind: str | None = None) -> pd.Series:
        """Month-end to month-end returns; the first base is the formation value."""
        kind = kind or self.returns
        if not isinstance(self.dates, pd.DatetimeIndex):
            raise PortfolioError("monthly returns need a date index")
        ends = np.flatnonzero(month_end_mask(self.dates))
        base = np.r_[0, ends[:-1]]
        if ends[0] == 0:
            base, ends = base[1:], ends[1:]
        lv = self.log_value
        lr = lv[ends] - lv[base]
        r = lr if kind == "log" else np.expm1(lr)
        return pd.Series(r, index=self.dates[ends], name="monthly_return")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"log_value": self.log_value}, index=self.dates)
        if isinstance(self.dates, pd.DatetimeIndex):
            frame["monthly_return"] = self.monthly_returns().reindex(self.dates)
        else:
            frame["monthly_return"] = np.nan
        frame.index.name = "date" if isinstance(self.dates, pd.DatetimeIndex) else "t"
        return frame


def basket_log_growth(prices: np.ndarray, held: np.ndarray) -> np.ndarray:
    """log(sum_H p(t) / sum_H p(t-1)) with H the set held over (t-1, t]."""
    p = np.nan_to_num(prices)
    h = held[:-1]
    num = np.where(h, p[1:], 0.0).sum(axis=1)
    den = np.where(h, p[:-1], 0.0).sum(axis=1)
    return np.log(num / den)


def _window(panel: PricePanel, start, end) -> tuple[np.ndarray, pd.Index, slice]:
    dates = panel.dates
    lo = 0 if start is None else int(dates.searchsorted(_coerce(dates, start), side="left"))
    hi = len(dates) if end is None else int(dates.searchsorted(_coerce(dates, end), side="right"))
    return panel.values()[lo:hi], dates[lo:hi], slice(lo, hi)


def _coerce(dates, x):
    return pd.Timestamp(x) if isinstance(dates, pd.DatetimeIndex) else x


def first_formation_date(panel: PricePanel, wait_years: float = 5, min_assets: int = 2):
    counts = eligibility_matrix(panel, wait_years).sum(axis=1)
    ok = np.flatnonzero(counts >= min_assets)
    if not ok.size:
        raise PortfolioError(f"never {min_assets} eligible assets in the panel")
    return panel.dates[ok[0]]


def universe_path(
    panel: PricePanel,
    start=None,
    end=None,
    rebalance: str = "monthly",
    wait_years: float = 5,
):
    """Shared schedule and eligible-set path for one backtest window.

    Returns ``(prices, dates, schedule, last, universe)`` where ``last[t]`` is
    the row of the most recent scheduled rebalance on or before ``t`` and
    ``universe`` is the eligible set frozen at that rebalance.
    """
    if start is None:
        start = first_formation_date(panel, wait_years)
    prices, dates, sl = _window(panel, start, end)
    if len(dates) == 0:
        raise PortfolioError("empty backtest window")
    elig = eligibility_matrix(panel, wait_years)[sl]
    sched = rebalance_schedule(dates, rebalance)
    last = np.maximum.accumulate(np.where(sched, np.arange(len(dates)), 0))
    universe = elig[last]
    if universe[0].sum() < 2:
        raise PortfolioError(f"fewer than 2 eligible assets at {dates[0]}")
    return prices, dates, sched, last, universe


def held_path(spec: PortfolioSpec, prices: np.ndarray, universe: np.ndarray, last: np.ndarray):
    """Holding mask and cutoff per date, decided at each date's last rebalance."""
    t, n = prices.shape
    rows = np.unique(last)
    key = np.where(universe[rows], prices[rows], np.nan)
    perm = rank_matrix(key)
    counts = universe[rows].sum(axis=1)
    held_r = np.zeros((len(rows), n), dtype=bool)
    cut_r = np.zeros(len(rows), dtype=int)
    for cnt in np.unique(counts):
        sel = np.flatnonzero(counts == cnt)
        lo, hi = spec.holding_ranks(int(cnt))
        sub = np.zeros((len(sel), n), dtype=bool)
        np.put_along_axis(sub, perm[sel, lo:hi], True, axis=1)
        held_r[sel] = sub
        cut_r[sel] = cnt if spec.kind == "market" else spec.cutoff_for(int(cnt))
    pos = np.searchsorted(rows, last)
    return held_r[pos], cut_r[pos]


def run_backtest(
    panel: PricePanel,
    spec: PortfolioSpec,
    start=None,
    end=None,
    rebalance: str = "monthly",
    wait_years: float = 5,
    returns: str = "simple",
) -> ValueSeries:
    """Evolve ``spec`` over ``[start, end]`` with scheduled rebalances.

    The initial value is the sum of eligible prices on the first date.
    """
    prices, dates, sched, last, universe = universe_path(panel, start, end, rebalance, wait_years)
    held, cut = held_path(spec, prices, universe, last)
    v0 = float(np.where(universe[0], np.nan_to_num(prices[0]), 0.0).sum())
    lv = np.empty(len(dates))
    lv[0] = np.log(v0)
    if len(dates) > 1:
        lv[1:] = lv[0] + np.cumsum(basket_log_growth(prices, held))
    changed = np.r_[True, np.any(held[1:] != held[:-1], axis=1)]
    return ValueSeries(dates, lv, held, universe, cut, changed, panel.assets, spec, returns)


def fold_backtest(
    panel: PricePanel,
    spec: PortfolioSpec,
    start=None,
    end=None,
    rebalance: str = "monthly",
    wait_years: float = 5,
) -> list[PortfolioState]:
    """Reference path: the same backtest as a sequential fold over states."""
    prices, dates, sched, last, universe = universe_path(panel, start, end, rebalance, wait_years)
    elig_all = eligibility_matrix(panel, wait_years)
    offset = int(panel.dates.searchsorted(dates[0]))
    state = initial_portfolio(spec, prices[0], date=dates[0], eligible=universe[0])
    states = [state]
    for t in range(1, len(dates)):
        state = evolve(state, prices[t], date=dates[t])
        state = rebalance_if_due(state, prices[t], spec, due=bool(sched[t]), date=dates[t], eligible=elig_all[offset + t])
        states.append(state)
    return states


def market_theta(prices: np.ndarray, universe: np.ndarray) -> np.ndarray:
    """Relative prices within the universe (zero outside)."""
    p = np.where(universe, np.nan_to_num(prices), 0.0)
    return p / p.sum(axis=1, keepdims=True)
