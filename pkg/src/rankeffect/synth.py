"""Synthetic closed, dividend-free markets.

Paths are integrated in log space, so prices stay strictly positive and GBM
paths are exact at any step size.  Three kinds of model are supported:

``gbm``     independent (or correlated) geometric Brownian motions with
            per-asset drift and volatility;
``rank``    drift and volatility looked up by the asset's current price rank
            each step (an Atlas-type model; higher drift in the bottom ranks
            keeps ranked relative prices stationary);
``custom``  per-asset tables plus optional per-rank drift and volatility.

Per-asset ``drift`` is added to the per-rank drift in both rank-aware kinds.

Drifts are arithmetic rates (per year): the log price moves by
``(mu - vol**2 / 2) dt + vol dW``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from rankeffect.panel import PricePanel
from rankeffect.ranks import rank_matrix

TRADING_DAYS = 252
KINDS = ("gbm", "rank", "custom")


@dataclass(frozen=True)
class MarketModel:
    kind: str = "gbm"
    n_assets: int = 10
    drift: float | Sequence[float] = 0.0
    vol: float | Sequence[float] = 0.3
    rank_drift: Sequence[float] | None = None
    rank_vol: Sequence[float] | None = None
    corr: float | np.ndarray = 0.0
    dt: float = 1.0 / 2520
    horizon: float = 20.0
    seed: int = 0
    initial: Sequence[float] | None = None
    start: str = "2000-01-03"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.n_assets < 2:
            raise ValueError("need at least 2 assets")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if self.kind == "rank" and self.rank_drift is None and self.rank_vol is None:
            raise ValueError("rank model needs rank_drift and/or rank_vol")
        for name in ("drift", "vol", "rank_drift", "rank_vol"):
            v = getattr(self, name)
            if v is not None and np.ndim(v) not in (0, 1):
                raise ValueError(f"{name} must be scalar or 1-d")
            if v is not None and np.ndim(v) == 1 and len(v) != self.n_assets:
                raise ValueError(f"{name} must have length {self.n_assets}")
        for name in ("vol", "rank_vol"):
            v = getattr(self, name)
            if v is not None and np.any(np.asarray(v, dtype=float) < 0):
                raise ValueError(f"{name} must be non-negative")
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (self.n_assets,) or np.any(init <= 0):
                raise ValueError("initial prices must be positive, one per asset")
        if not self.independent:
            self.cholesky()  # validates the correlation structure

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def independent(self) -> bool:
        return np.ndim(self.corr) == 0 and float(self.corr) == 0.0

    def correlation(self) -> np.ndarray:
        n = self.n_assets
        if np.ndim(self.corr) == 0:
            rho = float(self.corr)
            m = np.full((n, n), rho)
            np.fill_diagonal(m, 1.0)
        else:
            m = np.asarray(self.corr, dtype=float)
            if m.shape != (n, n) or not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
                raise ValueError("correlation must be a symmetric unit-diagonal matrix")
        return m

    def cholesky(self) -> np.ndarray:
        m = self.correlation()
        w, v = np.linalg.eigh(m)
        if w.min() < -1e-10:
            raise ValueError("correlation matrix is not positive semidefinite")
        # eigen square root also covers the singular (perfectly correlated) case
        return v * np.sqrt(np.clip(w, 0.0, None))

    def with_(self, **changes) -> "MarketModel":
        from dataclasses import replace

        return replace(self, **changes)


def atlas_drifts(n: int, spread: float) -> np.ndarray:
    """Per-rank drifts rising linearly from ``-spread`` (top) to ``+spread`` (bottom)."""
    return np.linspace(-spread, spread, n)


def stationary_rank_model(
    n_assets: int = 10,
    spread: float = 0.1,
    vol: float = 0.3,
    dt: float = 1.0 / 2520,
    horizon: float = 20.0,
    seed: int = 0,
) -> MarketModel:
    """Rank-based model whose ranked relative prices are stationary."""
    return MarketModel(
        kind="rank",
        n_assets=n_assets,
        rank_drift=atlas_drifts(n_assets, spread),
        vol=vol,
        dt=dt,
        horizon=horizon,
        seed=seed,
    )


def _draw(model: MarketModel, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((model.n_steps, model.n_assets))
    return z if model.independent else z @ model.cholesky().T


def simulate_paths(model: MarketModel, seeds: Sequence[int] | None = None) -> np.ndarray:
    """Log-price paths of shape (runs, steps + 1, assets).

    Run ``r`` uses seed ``seeds[r]`` (default: the model's own seed) and is
    bit-identical to a single-run simulation with that seed.
    """
    seeds = [model.seed] if seeds is None else list(seeds)
    n, steps, dt = model.n_assets, model.n_steps, model.dt
    noise = np.stack([_draw(model, s) for s in seeds]) * np.sqrt(dt)
    init = np.zeros(n) if model.initial is None else np.log(np.asarray(model.initial, dtype=float))
    mu = np.broadcast_to(np.asarray(model.drift, dtype=float), (n,))
    sig = np.broadcast_to(np.asarray(model.vol, dtype=float), (n,))
    out = np.empty((len(seeds), steps + 1, n))
    out[:, 0] = init

    if model.kind == "gbm":
        step = (mu - 0.5 * sig**2) * dt + sig * noise
        out[:, 1:] = init + np.cumsum(step, axis=1)
        return out

    rd = np.zeros(n) if model.rank_drift is None else np.asarray(model.rank_drift, dtype=float)
    rv = None if model.rank_vol is None else np.asarray(model.rank_vol, dtype=float)
    x = out[:, 0].copy()
    runs = np.arange(len(seeds))[:, None]
    for t in range(steps):
        perm = rank_matrix(x)
        rank_of = np.empty_like(perm)
        rank_of[runs, perm] = np.arange(n)
        m = mu + rd[rank_of]
        s = sig if rv is None else rv[rank_of]
        x = x + (m - 0.5 * s * s) * dt + s * noise[:, t]
        out[:, t + 1] = x
    return out


def time_index(model: MarketModel, length: int | None = None) -> pd.Index:
    """Business-day dates when one step is one trading day, else year fractions."""
    length = model.n_steps + 1 if length is None else length
    if abs(model.dt * TRADING_DAYS - 1.0) < 1e-12:
        return pd.bdate_range(model.start, periods=length, name="date")
    return pd.Index(np.arange(length) * model.dt, name="t")


def to_panel(model: MarketModel, log_prices: np.ndarray) -> PricePanel:
    idx = time_index(model, len(log_prices))
    cols = [f"A{i + 1:02d}" for i in range(log_prices.shape[1])]
    prices = pd.DataFrame(np.exp(log_prices), index=idx, columns=cols)
    entry = pd.Series([idx[0]] * len(cols), index=cols, name="entry_date")
    return PricePanel(prices=prices, entry_dates=entry, start_date=idx[0])


def simulate(model: MarketModel) -> PricePanel:
    """One seeded path as a :class:`PricePanel`."""
    return to_panel(model, simulate_paths(model)[0])


def tradable_mask(prices: np.ndarray, n: int) -> np.ndarray:
    """Top-``n`` membership per row (the tradable set)."""
    perm = rank_matrix(prices)
    mask = np.zeros(prices.shape, dtype=bool)
    np.put_along_axis(mask, perm[:, :n], True, axis=1)
    return mask


def simulate_with_exit(model: MarketModel, n: int) -> tuple[PricePanel, np.ndarray]:
    """Full panel plus the per-date mask of the ``n`` tradable (top-ranked) assets."""
    if not 1 < n < model.n_assets:
        raise ValueError(f"tradable count n={n} must satisfy 1 < n < {model.n_assets}")
    panel = simulate(model)
    return panel, tradable_mask(panel.values(), n)


def simulate_daily(model: MarketModel) -> PricePanel:
    """Simulate at ``model.dt`` and keep one close per trading day.

    ``dt`` must divide a trading day (1/252 year) into a whole number of
    steps.  The result carries business-day dates from ``model.start`` and
    can go through the same file formats as real data.
    """
    per_day = 1.0 / (model.dt * TRADING_DAYS)
    k = int(round(per_day))
    if k < 1 or abs(per_day - k) > 1e-9:
        raise ValueError("dt must split a trading day into a whole number of steps")
    closes = simulate_paths(model)[0][::k]
    idx = pd.bdate_range(model.start, periods=len(closes), name="date")
    cols = [f"A{i + 1:02d}" for i in range(closes.shape[1])]
    prices = pd.DataFrame(np.exp(closes), index=idx, columns=cols)
    entry = pd.Series([idx[0]] * len(cols), index=cols, name="entry_date")
    return PricePanel(prices=prices, entry_dates=entry, start_date=idx[0])
