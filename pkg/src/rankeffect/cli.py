"""Command-line entry point.

Every subcommand reads its options from flags and, optionally, a YAML or
JSON file given with ``--config``; flags win over the file.  All data files
are CSV at 15 significant digits and every file is written through an
atomic rename, so a failed run leaves no truncated output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import yaml

from rankeffect import analytics, plotting
from rankeffect.decomp import (
    Decompositions,
    decompose_big_vs_market,
    decompose_small_vs_big,
    decompose_small_vs_market,
    subset_masses,
)
from rankeffect.io import write_frame
from rankeffect.panel import PanelError, PricePanel, normalize_panel, read_any, write_long, write_wide
from rankeffect.portfolio import PortfolioError, PortfolioSpec, ValueSeries, run_backtest
from rankeffect.ranks import local_time_occupation, pair_increments
from rankeffect.synth import MarketModel, atlas_drifts, simulate_daily

log = logging.getLogger("rankeffect")

DEFAULTS: dict[str, Any] = {
    "input": None,
    "layout": "long",
    "start_date": None,
    "wait_years": 5.0,
    "cutoff": "half",
    "rebalance": "monthly",
    "range": None,
    "out": ".",
    "returns": "simple",
    "epsilon": None,
    "round_trip": False,
    "lookback": "4.5:5.5",
    "grid_start": None,
    "grid_end": None,
    "workers": 1,
    "model": "rank",
    "seed": 0,
    "dt": 1.0 / 252,
    "horizon": 20.0,
    "n_assets": 10,
    "vol": 0.3,
    "drift": 0.0,
    "spread": 0.1,
    "corr": 0.0,
    "sim_start": "2000-01-03",
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Options
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a mapping")
    cfg = {str(k).replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def resolve_options(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    opts = dict(DEFAULTS)
    opts.update(_load_config(getattr(args, "config", None)))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            opts[key] = val
    return opts


def parse_cutoff(value) -> int | str:
    if value in (None, "half"):
        return "half"
    try:
        c = int(value)
    except (TypeError, ValueError):
        raise CliError(f"cutoff must be 'half' or a positive integer, got {value!r}") from None
    if c < 1:
        raise CliError("cutoff must be at least 1")
    return c


def parse_range(value) -> tuple[pd.Timestamp | None, pd.Timestamp | None]:
    if not value:
        return None, None
    if isinstance(value, (list, tuple)):
        lo, hi = (list(value) + [None, None])[:2]
    else:
        if ":" not in str(value):
            raise CliError(f"range must look like START:END, got {value!r}")
        lo, hi = str(value).split(":", 1)
    conv = lambda x: pd.Timestamp(x) if x not in (None, "") else None
    return conv(lo), conv(hi)


def parse_lookback(value) -> tuple[float, float]:
    try:
        near, far = value if isinstance(value, (list, tuple)) else str(value).split(":", 1)
        near, far = float(near), float(far)
    except ValueError:
        raise CliError(f"lookback must look like NEAR:FAR in years, got {value!r}") from None
    if not 0 <= near < far:
        raise CliError(f"lookback needs 0 <= NEAR < FAR, got {value!r}")
    return near, far


# ---------------------------------------------------------------------------
# Pipeline pieces shared by subcommands
# ---------------------------------------------------------------------------


def load_panel(opts: dict[str, Any]) -> PricePanel:
    if not opts["input"]:
        raise CliError("--input is required")
    raw = read_any(opts["input"], layout=opts["layout"])
    return normalize_panel(raw, opts["start_date"])


@dataclass
class Backtests:
    market: ValueSeries
    big: ValueSeries
    small: ValueSeries | None
    prices: np.ndarray

    def items(self):
        out = [("market", self.market), ("small", self.small), ("big", self.big)]
        return [(k, v) for k, v in out if v is not None]


def run_backtests(panel: PricePanel, opts: dict[str, Any]) -> Backtests:
    cutoff = parse_cutoff(opts["cutoff"])
    start, end = parse_range(opts["range"])
    kw = dict(
        start=start,
        end=end,
        rebalance=opts["rebalance"],
        wait_years=float(opts["wait_years"]),
        returns=opts["returns"],
    )
    market = run_backtest(panel, PortfolioSpec("market", cutoff), **kw)
    big = run_backtest(panel, PortfolioSpec("big", cutoff), **kw)
    try:
        small = run_backtest(panel, PortfolioSpec("small", cutoff), **kw)
    except PortfolioError as exc:
        if cutoff == "half":
            raise
        log.warning("small portfolio skipped: %s", exc)
        small = None
    lo = int(panel.dates.searchsorted(market.dates[0]))
    prices = panel.values()[lo : lo + len(market.dates)]
    return Backtests(market, big, small, prices)


def decompositions(bt: Backtests) -> dict[str, Any]:
    """Available decompositions keyed sm, bm, sb (small ones need a small portfolio)."""
    ts, tb = subset_masses(bt.prices, bt.big.universe, bt.big.cutoff)
    out = {"bm": decompose_big_vs_market(bt.big, bt.market, tb)}
    if bt.small is not None:
        full = Decompositions(
            decompose_small_vs_market(bt.small, bt.market, ts),
            out["bm"],
            decompose_small_vs_big(bt.small, bt.big, ts, tb),
        )
        out = dict(full.items())
    return out


def monthly_table(bt: Backtests) -> dict[str, pd.Series]:
    return {name: vs.monthly_returns() for name, vs in bt.items()}


def relative_table(bt: Backtests) -> dict[str, pd.Series]:
    r = monthly_table(bt)
    if "small" not in r:
        return {"big_vs_market": analytics.relative_returns(r["big"], r["market"])}
    return {
        "small_vs_market": analytics.relative_returns(r["small"], r["market"]),
        "small_vs_big": analytics.relative_returns(r["small"], r["big"]),
    }


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_backtest(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    bt = run_backtests(load_panel(opts), opts)
    absolute = analytics.stats(monthly_table(bt))
    relative = analytics.stats(relative_table(bt))
    for name, vs in bt.items():
        write_frame(out / f"values_{name}.csv", vs.to_frame(), index_label="date")
    table = pd.concat([absolute.to_frame(), relative.to_frame()], ignore_index=True)
    write_frame(out / "stats.csv", table)
    write_frame(out / "correlations.csv", absolute.correlations, index_label="series")
    plotting.save_svg(plotting.values_figure(dict(bt.items())), out / "charts" / "values.svg")
    _emit(analytics.format_returns_table(absolute))
    _emit("\n")
    _emit(analytics.format_relative_table(relative))
    return 0


def _local_time_frame(bt: Backtests, decs: dict[str, Any], epsilon) -> pd.DataFrame | None:
    if bt.small is None:
        return None
    masked = np.where(bt.big.universe, bt.prices, np.nan)
    gap, dx = pair_increments(masked, bt.big.cutoff)
    occ = local_time_occupation(gap, epsilon, increments=dx)
    frame = pd.DataFrame(
        {
            "lambda_small": decs["sm"].local_time().cumulative,
            "lambda_big": decs["bm"].local_time().cumulative,
            "lambda_occupation": occ,
        },
        index=bt.market.dates,
    )
    return frame


def cmd_decompose(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    bt = run_backtests(load_panel(opts), opts)
    decs = decompositions(bt)
    lt = _local_time_frame(bt, decs, opts["epsilon"])
    for key, d in decs.items():
        write_frame(out / f"decomp_{key}.csv", d.to_frame(), index_label=d.to_frame().index.name)
    if lt is not None:
        write_frame(out / "local_time.csv", lt, index_label="date")
    for key, d in decs.items():
        plotting.save_svg(plotting.decomposition_figure(d), out / "charts" / f"decomp_{key}.svg")
    for key, d in decs.items():
        resid = float(np.max(np.abs(d.residual)))
        msg = f"{d.label}: abnormal {d.cum_abnormal_log[-1]:.6f} = crossovers {d.cum_adj_local_time[-1]:.6f}"
        msg += f" + relative price {d.log_rel_price[-1] - d.log_rel_price[0]:.6f} (max residual {resid:.3g})"
        _emit(msg + "\n")
    if "sm" in decs:
        try:
            cov_lt, cov_rel = analytics.variation_contrast(decs["sm"])
            _emit(f"coefficient of variation: crossovers {cov_lt:.2f}, relative price {cov_rel:.2f}\n")
        except ValueError as exc:
            _emit(f"coefficient of variation undefined: {exc}\n")
    return 0


def cmd_counterfactual(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    bt = run_backtests(load_panel(opts), opts)
    decs = decompositions(bt)
    if "sm" not in decs:
        raise CliError("counterfactuals need the small portfolio; use a cutoff below N")
    results = [analytics.counterfactual_theta(decs[k]) for k in ("sm", "sb")]
    write_frame(out / "counterfactual.csv", pd.concat([r.to_frame() for r in results], ignore_index=True))
    _emit(analytics.format_counterfactual_table(results))
    if opts["round_trip"]:
        for key, r in zip(("sm", "sb"), results):
            resid = analytics.counterfactual_round_trip(decs[key], r)
            _emit(f"round-trip residual {r.mode}: {resid:.3g}\n")
    return 0


def cmd_value_anomaly(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    panel = load_panel(opts)
    bt = run_backtests(panel, opts)
    start, end = parse_range(opts["range"])
    va = analytics.value_anomaly_series(panel, parse_lookback(opts["lookback"]), start=start, end=end)
    frame = va.to_frame()
    rel = relative_table(bt)
    for name, series in rel.items():
        frame[name] = series.reindex(frame.index)
    write_frame(out / "value_anomaly.csv", frame, index_label="date")
    fits = {}
    for name, series in rel.items():
        y, x = va.excess.align(series, join="inner")
        # regress in percent per month, the units of the reported table
        fits[name] = analytics.ols(100.0 * y.to_numpy(), 100.0 * x.to_numpy())
    reg = pd.concat({k: v.to_frame() for k, v in fits.items()}, names=["regressor"]).reset_index()
    reg["adj_r2"] = reg["regressor"].map({k: v.adj_r2 for k, v in fits.items()})
    reg["n_obs"] = reg["regressor"].map({k: v.n_obs for k, v in fits.items()})
    write_frame(out / "regression.csv", reg)
    _emit(analytics.format_regression_table(fits))
    return 0


def cmd_sweep(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    if not opts["input"]:
        raise CliError("--input is required")
    raw = read_any(opts["input"], layout=opts["layout"])
    grid = analytics.quarterly_grid(raw, opts["grid_start"], opts["grid_end"])
    if not len(grid):
        raise CliError("empty start-date grid")
    _, end = parse_range(opts["range"])
    cfg = analytics.SweepConfig(
        wait_years=float(opts["wait_years"]),
        cutoff=parse_cutoff(opts["cutoff"]),
        rebalance=opts["rebalance"],
        returns=opts["returns"],
        end=end,
    )
    result = analytics.start_date_sweep(raw, grid, cfg, workers=int(opts["workers"]))
    table = result.table[["start_date", "sharpe_vs_market", "sharpe_vs_big"]]
    write_frame(out / "sweep.csv", table)
    plotting.save_svg(plotting.sweep_figure(table), out / "charts" / "sweep.svg")
    sm, sb = result.average
    _emit(f"start dates: {len(table)}; average Sharpe small over market {sm:.4f}, small over big {sb:.4f}\n")
    return 0


def build_model(opts: dict[str, Any]) -> MarketModel:
    kind = opts["model"]
    n = int(opts["n_assets"])
    common = dict(
        n_assets=n,
        drift=float(opts["drift"]),
        vol=float(opts["vol"]),
        corr=float(opts["corr"]),
        dt=float(opts["dt"]),
        horizon=float(opts["horizon"]),
        seed=int(opts["seed"]),
        start=str(opts["sim_start"]),
    )
    if kind == "gbm":
        return MarketModel(kind="gbm", **common)
    if kind == "rank":
        return MarketModel(kind="rank", rank_drift=atlas_drifts(n, float(opts["spread"])), **common)
    raise CliError(f"unknown model {kind!r}; choose gbm or rank")


def cmd_simulate(opts: dict[str, Any]) -> int:
    out = Path(opts["out"])
    panel = simulate_daily(build_model(opts))
    if opts["layout"] == "wide":
        write_wide(panel.prices, out / "panel.csv")
    else:
        write_long(panel, out / "panel.csv")
    plotting.save_svg(plotting.panel_figure(panel.prices), out / "charts" / "panel.svg")
    _emit(f"{len(panel.dates)} dates x {len(panel.assets)} assets written to {out / 'panel.csv'}\n")
    return 0


COMMANDS = {
    "backtest": cmd_backtest,
    "decompose": cmd_decompose,
    "counterfactual": cmd_counterfactual,
    "value-anomaly": cmd_value_anomaly,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON file with option values; flags win")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="price file")
    p.add_argument("--layout", choices=["long", "wide"], help="input layout (default long)")
    p.add_argument("--start-date", dest="start_date", help="normalization start date (default: first date)")
    p.add_argument("--wait-years", dest="wait_years", type=float, help="years an asset waits after entry (default 5)")
    p.add_argument("--cutoff", help="'half' for floor(N/2), or a fixed rank count K")
    p.add_argument("--rebalance", choices=["monthly", "step", "never"], help="rebalance frequency (default monthly)")
    p.add_argument("--range", help="backtest window START:END, either side may be empty")
    p.add_argument("--returns", choices=["simple", "log"], help="monthly return convention (default simple)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankeffect",
        description="Rank-effect portfolios and their crossover / relative-price decomposition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backtest", help="market, small and big value series with return statistics")
    _common(p)
    _data(p)

    p = sub.add_parser("decompose", help="crossover and relative-price decompositions with charts")
    _common(p)
    _data(p)
    p.add_argument("--epsilon", type=float, help="band width for the occupation-time cross-check")

    p = sub.add_parser("counterfactual", help="terminal relative prices that cancel the rank effect")
    _common(p)
    _data(p)
    p.add_argument("--round-trip", dest="round_trip", action="store_true", help="print the inversion residuals")

    p = sub.add_parser("value-anomaly", help="value anomaly returns regressed on the rank effect")
    _common(p)
    _data(p)
    p.add_argument("--lookback", help="lookback window in years NEAR:FAR (default 4.5:5.5)")

    p = sub.add_parser("sweep", help="relative Sharpe ratios over quarterly normalization start dates")
    _common(p)
    _data(p)
    p.add_argument("--grid-start", dest="grid_start", help="first start date of the grid")
    p.add_argument("--grid-end", dest="grid_end", help="last start date of the grid")
    p.add_argument("--workers", type=int, help="processes for the grid (default 1)")

    p = sub.add_parser("simulate", help="write a synthetic daily price panel")
    _common(p)
    p.add_argument("--model", choices=["gbm", "rank"], help="gbm or rank-based drift (default rank)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--dt", type=float, help="step in years; must divide 1/252 (default 1/252)")
    p.add_argument("--horizon", type=float, help="years to simulate (default 20)")
    p.add_argument("--n-assets", dest="n_assets", type=int, help="number of assets (default 10)")
    p.add_argument("--vol", type=float, help="volatility per year (default 0.3)")
    p.add_argument("--drift", type=float, help="drift per year added to every asset (default 0)")
    p.add_argument("--spread", type=float, help="rank-drift spread for the rank model (default 0.1)")
    p.add_argument("--corr", type=float, help="pairwise correlation (default 0)")
    p.add_argument("--sim-start", dest="sim_start", help="first date of the panel (default 2000-01-03)")
    p.add_argument("--layout", choices=["long", "wide"], help="output layout (default long)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (CliError, PanelError, PortfolioError, analytics.AnalyticsError, ValueError, OSError) as exc:
        sys.stderr.write(f"rankeffect {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
