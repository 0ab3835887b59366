"""Ranked prices, relative prices and rank-crossover measures.

Ranks run from most to least expensive.  Asset and rank positions are
0-based throughout: ``perm[k]`` is the index of the asset holding rank
``k + 1``.  Ties are broken by putting the asset with the larger index
first, which keeps the permutation deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class RankedSnapshot:
    """One date's ranked view of a price vector."""

    date: Any
    perm: np.ndarray
    ranked_prices: np.ndarray
    theta: np.ndarray
    theta_ranked: np.ndarray

    @property
    def n_assets(self) -> int:
        return len(self.perm)

    @property
    def rank_of(self) -> np.ndarray:
        """Inverse permutation: ``rank_of[i]`` is the 0-based rank of asset ``i``."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "date": self.date,
                "rank": np.arange(1, self.n_assets + 1),
                "asset": self.perm,
                "price": self.ranked_prices,
                "theta": self.theta_ranked,
            }
        )


@dataclass(frozen=True)
class SubsetMass:
    c: int
    theta_small: float
    theta_big: float


def _descending_order(prices: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary -> price descending, then index descending
    idx = np.arange(prices.shape[-1])
    return np.lexsort((-idx, -prices))


def rank_snapshot(prices: Sequence[float], date: Any = None) -> RankedSnapshot:
    """Rank a strictly positive price vector.

    >>> snap = rank_snapshot([3.0, 1.0, 2.0])
    >>> snap.perm.tolist()
    [0, 2, 1]
    """
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("prices must be a non-empty 1-d vector")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("all prices must be finite and strictly positive")
    perm = _descending_order(p)
    theta = p / p.sum()
    return RankedSnapshot(
        date=date,
        perm=perm,
        ranked_prices=p[perm],
        theta=theta,
        theta_ranked=theta[perm],
    )


def subset_mass(snapshot: RankedSnapshot, c: int) -> SubsetMass:
    """Relative price of the top ``c`` ranks and of the remaining bottom ranks."""
    n = snapshot.n_assets
    if not 1 <= c < n:
        raise ValueError(f"cutoff c={c} outside [1, {n - 1}]")
    big = float(snapshot.theta_ranked[:c].sum())
    small = float(snapshot.theta_ranked[c:].sum())
    return SubsetMass(c=c, theta_small=small, theta_big=big)


# ---------------------------------------------------------------------------
# Vectorised forms over a (dates x assets) matrix.  Absent assets are NaN.
# ---------------------------------------------------------------------------


def rank_matrix(prices: np.ndarray) -> np.ndarray:
    """Row-wise descending order with the larger-index tie rule.

    NaN entries (absent assets) sort after every present asset.
    """
    p = np.asarray(prices, dtype=float)
    n = p.shape[1]
    key = np.where(np.isnan(p), -np.inf, p)
    # reverse columns so a stable sort on -price leaves ties in descending
    # index order
    rev = np.arange(n)[::-1]
    order = np.argsort(-key[:, rev], axis=1, kind="stable")
    return rev[order]


def ranked_theta(prices: np.ndarray, perm: np.ndarray | None = None) -> np.ndarray:
    """Ranked relative prices theta_(k) per row; absent assets contribute 0."""
    p = np.nan_to_num(np.asarray(prices, dtype=float), nan=0.0)
    if perm is None:
        perm = rank_matrix(prices)
    total = p.sum(axis=1, keepdims=True)
    return np.take_along_axis(p, perm, axis=1) / total


def subset_mass_series(
    prices: np.ndarray, c: np.ndarray | int, perm: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(theta_small, theta_big) per row for cutoff ``c`` (scalar or per row).

    Both masses are summed directly rather than as ``1 - other`` to avoid
    cancellation when one of them is tiny.
    """
    th = ranked_theta(prices, perm)
    t, n = th.shape
    cs = np.broadcast_to(np.asarray(c, dtype=int), (t,))
    top = np.arange(n)[None, :] < cs[:, None]
    big = np.where(top, th, 0.0).sum(axis=1)
    small = np.where(top, 0.0, th).sum(axis=1)
    return small, big


def local_time_occupation(
    gap: Sequence[float],
    epsilon: float | None = None,
    increments: Sequence[float] | None = None,
) -> np.ndarray:
    """Occupation-density estimate of the local time at zero of a gap process.

    ``gap`` is the non-negative spacing between adjacent ranked relative
    prices.  The estimate is

        (1 / 2 eps) * sum_t 1{gap_t < eps} * dx_t^2

    i.e. time spent in the band measured on a quadratic-variation clock.
    ``dx_t`` defaults to the change in the gap itself; pass ``increments``
    (see :func:`pair_increments`) to clock on the unranked difference of the
    pair that held the two ranks at the start of each step.  The two agree
    away from crossings, but on a crossing step ``|d gap|`` understates the
    move, which biases the gap clock low on coarse grids.

    Returns the cumulative estimate with a leading zero, ``len(gap)`` long.
    """
    g = np.asarray(gap, dtype=float)
    if np.any(g < 0):
        raise ValueError("gap series must be non-negative")
    dx = np.diff(g) if increments is None else np.asarray(increments, dtype=float)
    if dx.shape != (len(g) - 1,):
        raise ValueError("increments must have one entry per step")
    if epsilon is None:
        epsilon = default_epsilon(g)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    inband = g[:-1] < epsilon
    incr = np.where(inband, dx * dx, 0.0) / (2.0 * epsilon)
    return np.concatenate([[0.0], np.cumsum(incr)])


def default_epsilon(gap: Sequence[float]) -> float:
    """Half the standard deviation of one-step gap changes."""
    s = float(np.std(np.diff(np.asarray(gap, dtype=float))))
    return 0.5 * s if s > 0 else 1e-12


def pair_increments(prices: np.ndarray, c) -> tuple[np.ndarray, np.ndarray]:
    """Gap between ranks ``c`` and ``c + 1`` and its unranked step increments.

    Returns ``(gap, dx)`` where ``gap[t] = theta_(c)(t) - theta_(c+1)(t)`` and
    ``dx[t]`` is the change over step ``t`` of the relative-price difference
    of the two assets that held those ranks at time ``t``.  ``c`` is 1-based,
    either one integer or one value per row.  NaN prices mark absent assets,
    which carry no relative price.
    """
    p = np.asarray(prices, dtype=float)
    t, n = p.shape
    cs = np.broadcast_to(np.asarray(c, dtype=int), (t,))
    present = (~np.isnan(p)).sum(axis=1)
    if np.any(cs < 1) or np.any(cs >= present):
        raise ValueError("c must satisfy 1 <= c < number of assets present")
    pz = np.nan_to_num(p)
    theta = pz / pz.sum(axis=1, keepdims=True)
    perm = rank_matrix(p)
    rows = np.arange(t)
    a, b = perm[rows, cs - 1], perm[rows, cs]
    gap = theta[rows, a] - theta[rows, b]
    later = theta[rows[1:], a[:-1]] - theta[rows[1:], b[:-1]]
    return gap, later - gap[:-1]


def crossover_count(snapshots: Sequence[RankedSnapshot], c: int) -> np.ndarray:
    """Per-date number of assets that moved across the top-``c`` boundary."""
    if not snapshots:
        return np.zeros(0, dtype=int)
    n = snapshots[0].n_assets
    tops = np.zeros((len(snapshots), n), dtype=bool)
    for t, s in enumerate(snapshots):
        if s.n_assets != n:
            raise ValueError("snapshots must share the same asset set")
        tops[t, s.perm[:c]] = True
    return crossover_count_matrix(tops)


def crossover_count_matrix(top_mask: np.ndarray) -> np.ndarray:
    """Counts from a boolean (dates x assets) top-set membership matrix."""
    out = np.zeros(len(top_mask), dtype=int)
    if len(top_mask) > 1:
        out[1:] = (top_mask[1:] != top_mask[:-1]).sum(axis=1)
    return out


def top_mask(perm: np.ndarray, c: np.ndarray | int, present: np.ndarray | None = None) -> np.ndarray:
    """Boolean membership of ranks ``1..c`` per row."""
    t, n = perm.shape
    cs = np.broadcast_to(np.asarray(c, dtype=int), (t,))
    mask = np.zeros((t, n), dtype=bool)
    ranks = np.arange(n)[None, :] < cs[:, None]
    np.put_along_axis(mask, perm, ranks, axis=1)
    if present is not None:
        mask &= present
    return mask


def triple_points(prices: np.ndarray) -> np.ndarray:
    """Row indices where three or more assets share exactly the same price."""
    p = np.asarray(prices, dtype=float)
    s = np.sort(np.where(np.isnan(p), np.nan, p), axis=1)
    eq = (s[:, 2:] == s[:, 1:-1]) & (s[:, 1:-1] == s[:, :-2])
    return np.flatnonzero(eq.any(axis=1))
