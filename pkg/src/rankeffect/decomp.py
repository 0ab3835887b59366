"""Relative-return decompositions into rank crossovers and relative prices.

For the small (bottom N - c ranks) and big (top c ranks) portfolios against
the market:

    log V_s - log V_m  =  1/2 int dL / Theta_s  +  log Theta_s(T) - log Theta_s(0)
    log V_b - log V_m  = -1/2 int dL / Theta_b  +  log Theta_b(T) - log Theta_b(0)

where L is the local time at zero of theta_(c) - theta_(c+1).  The
local-time integral is never estimated directly here: it is recovered as
the residual of observed log values and observed ranked masses, so the
identity closes by construction.  Raw increments of L are then backed out
by dividing by the weight in front of dL.

Negative residual increments are kept.  They appear when holdings lag the
current ranks (monthly rebalancing) and clipping them would break closure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from rankeffect.portfolio import ValueSeries
from rankeffect.ranks import rank_matrix


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class LocalTimeIncrements:
    dates: pd.Index
    d_lambda: np.ndarray
    weight: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.d_lambda)])


@dataclass(frozen=True)
class DecompositionSeries:
    """Cumulative abnormal log return split into local time and relative price.

    ``weight`` is the coefficient in front of dL in the local-time integral
    (``1/(2 Theta_s)``, ``-1/(2 Theta_b)`` or ``(1/Theta_s + 1/Theta_b)/2``),
    one value per date.
    """

    dates: pd.Index
    cum_abnormal_log: np.ndarray
    cum_adj_local_time: np.ndarray
    log_rel_price: np.ndarray
    weight: np.ndarray
    label: str = ""

    @property
    def residual(self) -> np.ndarray:
        rel = self.log_rel_price - self.log_rel_price[0]
        return self.cum_abnormal_log - self.cum_adj_local_time - rel

    def local_time(self, timing: str = "start") -> LocalTimeIncrements:
        """Raw dL per step, weighting with start- or end-of-step masses."""
        if timing not in ("start", "end"):
            raise ValueError("timing must be 'start' or 'end'")
        w = self.weight[:-1] if timing == "start" else self.weight[1:]
        d_adj = np.diff(self.cum_adj_local_time)
        return LocalTimeIncrements(self.dates[1:], d_adj / w, w)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "cum_abnormal_log": self.cum_abnormal_log,
                "cum_adj_local_time": self.cum_adj_local_time,
                "log_rel_price": self.log_rel_price,
                "residual": self.residual,
            },
            index=self.dates,
        )
        frame.index.name = "date" if isinstance(self.dates, pd.DatetimeIndex) else "t"
        return frame


def _log_values(series, name: str) -> tuple[np.ndarray, pd.Index | None]:
    if isinstance(series, ValueSeries):
        return np.asarray(series.log_value, dtype=float), series.dates
    return np.asarray(series, dtype=float), None


def _check_mass(theta: np.ndarray, name: str) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)) or np.any(theta > 1 + 1e-12):
        raise DecompositionError(f"{name} must lie in (0, 1]")
    return theta


def _aligned(a, b, *masses, dates=None):
    la, da = _log_values(a, "a")
    lb, db = _log_values(b, "b")
    if da is not None and db is not None and not da.equals(db):
        raise DecompositionError("value series are not aligned on the same dates")
    n = len(la)
    if len(lb) != n or any(len(m) != n for m in masses):
        raise DecompositionError("series lengths differ")
    if dates is None:
        dates = da if da is not None else (db if db is not None else pd.RangeIndex(n))
    return la, lb, dates


def _build(dates, log_a, log_b, log_rel, weight, label) -> DecompositionSeries:
    abnormal = (log_a - log_b) - (log_a[0] - log_b[0])
    adj = abnormal - (log_rel - log_rel[0])
    return DecompositionSeries(pd.Index(dates), abnormal, adj, log_rel, weight, label)


def decompose_small_vs_market(small, market, theta_small, dates=None) -> DecompositionSeries:
    ls, lm, dates = _aligned(small, market, theta_small, dates=dates)
    ts = _check_mass(theta_small, "theta_small")
    if np.any(ts >= 1):
        raise DecompositionError("theta_small must be < 1")
    return _build(dates, ls, lm, np.log(ts), 0.5 / ts, "small_vs_market")


def decompose_big_vs_market(big, market, theta_big, dates=None) -> DecompositionSeries:
    lb, lm, dates = _aligned(big, market, theta_big, dates=dates)
    tb = _check_mass(theta_big, "theta_big")
    return _build(dates, lb, lm, np.log(tb), -0.5 / tb, "big_vs_market")


def decompose_small_vs_big(small, big, theta_small, theta_big, dates=None) -> DecompositionSeries:
    ls, lb, dates = _aligned(small, big, theta_small, theta_big, dates=dates)
    ts = _check_mass(theta_small, "theta_small")
    tb = _check_mass(theta_big, "theta_big")
    return _build(dates, ls, lb, np.log(ts) - np.log(tb), 0.5 * (1 / ts + 1 / tb), "small_vs_big")


def differential_series(d: DecompositionSeries) -> pd.DataFrame:
    """Per-step increments of the three components; first row dropped."""
    frame = pd.DataFrame(
        {
            "d_log_rel_value": np.diff(d.cum_abnormal_log),
            "d_local_time": np.diff(d.cum_adj_local_time),
            "d_log_rel_price": np.diff(d.log_rel_price),
        },
        index=d.dates[1:],
    )
    return frame


def coefficient_of_variation(increments: Sequence[float]) -> float:
    """Sample standard deviation over the absolute mean."""
    x = np.asarray(increments, dtype=float)
    if x.size < 2:
        raise DecompositionError("need at least 2 increments")
    mean = x.mean()
    if mean == 0:
        raise DecompositionError("coefficient of variation undefined for zero mean")
    return float(x.std(ddof=1) / abs(mean))


# ---------------------------------------------------------------------------
# Ranked masses from prices
# ---------------------------------------------------------------------------


def subset_masses(prices: np.ndarray, universe: np.ndarray | None, cutoff) -> tuple[np.ndarray, np.ndarray]:
    """(Theta_s, Theta_b) per date over the universe, cutoff ``c`` per date."""
    p = np.asarray(prices, dtype=float)
    if universe is not None:
        p = np.where(universe, p, np.nan)
    perm = rank_matrix(p)
    pz = np.nan_to_num(p)
    ranked = np.take_along_axis(pz, perm, axis=1)
    total = ranked.sum(axis=1)
    t, n = p.shape
    cs = np.broadcast_to(np.asarray(cutoff, dtype=int), (t,))
    top = np.arange(n)[None, :] < cs[:, None]
    big = np.where(top, ranked, 0.0).sum(axis=1) / total
    small = np.where(top, 0.0, ranked).sum(axis=1) / total
    return small, big


def top_mass(prices: np.ndarray, k) -> np.ndarray:
    """Relative price of ranks 1..k over all present assets."""
    return subset_masses(prices, None, k)[1]


@dataclass(frozen=True)
class Decompositions:
    small_vs_market: DecompositionSeries
    big_vs_market: DecompositionSeries
    small_vs_big: DecompositionSeries

    def items(self):
        return [("sm", self.small_vs_market), ("bm", self.big_vs_market), ("sb", self.small_vs_big)]


def decompose_backtest(
    market: ValueSeries, small: ValueSeries, big: ValueSeries, prices: np.ndarray
) -> Decompositions:
    """All three decompositions for one backtest.

    Masses are taken over the backtest's universe with its cutoff, at each
    date's prices.
    """
    ts, tb = subset_masses(prices, small.universe, small.cutoff)
    return Decompositions(
        decompose_small_vs_market(small, market, ts),
        decompose_big_vs_market(big, market, tb),
        decompose_small_vs_big(small, big, ts, tb),
    )


# ---------------------------------------------------------------------------
# Entry and exit through a top-n tradable set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntryExitDecomposition:
    """Decompositions against the tradable-only market m' (= big_n).

    ``lambda_n`` and ``lambda_c`` are cumulative raw local times recovered in
    that order: L^n from m' against the full market, then L^c from big_c
    against m'.  ``exit_adjustment`` accumulates
    ``dL^n (1/Theta_bn - 1/(Theta_bn - Theta_bc)) / 2``, the drag that exits
    at rank n put on s'_c against m'.  ``closure_gap`` is the small-prime
    residual minus the local-time integral rebuilt from the two recovered
    processes; it is a discretization diagnostic, zero in continuous time.
    """

    small_prime_vs_market_prime: DecompositionSeries
    big_vs_market_prime: DecompositionSeries
    small_prime_vs_big: DecompositionSeries
    market_prime_vs_market: DecompositionSeries
    d_lambda_n: np.ndarray
    d_lambda_c: np.ndarray
    exit_increments: np.ndarray
    closure_gap: np.ndarray

    @property
    def lambda_n(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.d_lambda_n)])

    @property
    def lambda_c(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.d_lambda_c)])

    @property
    def exit_adjustment(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.exit_increments)])


def decompose_entry_exit(
    small_prime,
    market_prime,
    big,
    market,
    theta_bc: np.ndarray,
    theta_bn: np.ndarray,
    c: int,
    n: int,
    n_assets: int | None = None,
    dates=None,
) -> EntryExitDecomposition:
    """Decompose s'_c and b_c against m' when only the top ``n`` ranks trade."""
    if n <= c:
        raise DecompositionError(f"tradable count n={n} must exceed cutoff c={c}")
    if n_assets is not None and n > n_assets:
        raise DecompositionError(f"tradable count n={n} exceeds N={n_assets}")
    lsp, lmp, dates = _aligned(small_prime, market_prime, theta_bc, theta_bn, dates=dates)
    lb, lm, _ = _aligned(big, market, theta_bc, dates=dates)
    tbc = _check_mass(theta_bc, "theta_bc")
    tbn = _check_mass(theta_bn, "theta_bn")
    if np.any(tbn <= tbc):
        raise DecompositionError("theta_bn must exceed theta_bc")
    prime_sc = (tbn - tbc) / tbn
    prime_bc = tbc / tbn
    gap = tbn - tbc

    mm = _build(dates, lmp, lm, np.log(tbn), -0.5 / tbn, "market_prime_vs_market")
    d_ln = -2.0 * tbn[:-1] * np.diff(mm.cum_adj_local_time)

    b1 = _build(dates, lsp, lmp, np.log(prime_sc), 0.5 / gap, "small_prime_vs_market_prime")
    b2 = _build(dates, lb, lmp, np.log(prime_bc), -0.5 / tbc, "big_vs_market_prime")
    b3 = _build(dates, lsp, lb, np.log(prime_sc) - np.log(prime_bc), 0.5 * (1 / tbc + 1 / gap), "small_prime_vs_big")

    d_b2 = np.diff(b2.cum_adj_local_time)
    d_lc = tbc[:-1] * (d_ln / tbn[:-1] - 2.0 * d_b2)
    exit_incr = 0.5 * d_ln * (1.0 / tbn[:-1] - 1.0 / gap[:-1])
    model_b1 = 0.5 * (d_ln / tbn[:-1] + (d_lc - d_ln) / gap[:-1])
    closure = b1.cum_adj_local_time - np.concatenate([[0.0], np.cumsum(model_b1)])
    return EntryExitDecomposition(b1, b2, b3, mm, d_ln, d_lc, exit_incr, closure)
