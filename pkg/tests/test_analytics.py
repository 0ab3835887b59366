import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankeffect import analytics as A
from rankeffect.decomp import decompose_backtest, decompose_small_vs_big, decompose_small_vs_market
from rankeffect.panel import PricePanel
from rankeffect.portfolio import PortfolioSpec, run_backtest
from rankeffect.synth import simulate, stationary_rank_model


def _monthly(values, start="2000-01-31"):
    return pd.Series(values, index=pd.date_range(start, periods=len(values), freq="ME"))


@pytest.fixture(scope="module")
def rank_panel():
    return simulate(stationary_rank_model(dt=1 / 252, horizon=30, seed=1))


@pytest.fixture(scope="module")
def rank_backtests(rank_panel):
    return {k: run_backtest(rank_panel, PortfolioSpec(k), wait_years=0) for k in ("market", "small", "big")}


# --- summary statistics -----------------------------------------------------


def test_constant_return_annualizes_without_sharpe():
    mean, std, sharpe = A.annualize(np.full(24, 0.01))
    assert mean == pytest.approx(12.0)
    assert std == 0.0
    assert math.isnan(sharpe)


def test_alternating_returns():
    mean, std, sharpe = A.annualize(np.tile([0.01, -0.01], 12))
    assert mean == pytest.approx(0.0, abs=1e-14)
    assert std == pytest.approx(100 * np.std(np.tile([0.01, -0.01], 12), ddof=1) * math.sqrt(12))
    assert sharpe == pytest.approx(0.0, abs=1e-12)


def test_hand_computed_sharpe():
    r = np.array([0.02, 0.0, 0.01, 0.03])
    mean, std, sharpe = A.annualize(r)
    assert mean == pytest.approx(100 * 0.015 * 12)
    assert sharpe == pytest.approx(0.015 * 12 / (np.std(r, ddof=1) * math.sqrt(12)))
    with pytest.raises(A.AnalyticsError):
        A.annualize([0.01])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=3, max_size=40), st.floats(0.1, 10))
def test_sharpe_is_scale_invariant(r, k):
    r = np.asarray(r)
    if np.std(r) < 1e-6:
        return
    assert A.sharpe_ratio(k * r) == pytest.approx(A.sharpe_ratio(r), rel=1e-9, abs=1e-9)


def test_decade_windows():
    idx = pd.date_range("1974-01-31", "2018-12-31", freq="ME")
    labels = [w.label for w in A.decade_windows(idx)]
    assert labels == ["1974-2018", "1974-1980", "1980-1990", "1990-2000", "2000-2010", "2010-2018"]
    s = pd.Series(1.0, index=idx)
    sizes = [len(w.select(s)) for w in A.decade_windows(idx)]
    assert sizes[0] == len(idx) == sum(sizes[1:])
    assert sizes[1] == 72


def test_stats_report(rank_backtests):
    r = {k: v.monthly_returns() for k, v in rank_backtests.items()}
    rep = A.stats(r)
    assert rep.series == ["market", "small", "big"]
    full = f"{r['small'].index[0].year}-{r['small'].index[-1].year}"
    assert rep.windows[0] == full
    row = rep.get(full, "small")
    mean, std, sharpe = A.annualize(r["small"].to_numpy())
    assert (row["mean"], row["std"], row["sharpe"]) == pytest.approx((mean, std, sharpe))
    assert rep.correlations.loc["small", "big"] == pytest.approx(np.corrcoef(r["small"], r["big"])[0, 1])
    assert list(rep.to_frame().columns) == ["window", "series", "mean", "std", "sharpe", "n_months"]
    text = A.format_returns_table(rep)
    assert "2000-2010" in text and "%" in text
    with pytest.raises(A.AnalyticsError):
        A.stats({"x": _monthly([0.1])})


def test_relative_returns_align():
    a = _monthly([0.02, 0.03, 0.01])
    b = _monthly([0.01, 0.01], start="2000-02-29")
    rel = A.relative_returns(a, b)
    assert rel.tolist() == pytest.approx([0.02, 0.0])


# --- counterfactuals --------------------------------------------------------


def test_without_crossovers_counterfactual_is_initial_price():
    theta = np.array([0.4, 0.45, 0.5])
    # small gains exactly its relative-price change
    d = decompose_small_vs_market(np.log(theta / 0.4), np.zeros(3), theta)
    res = A.counterfactual_theta(d)
    assert res.counterfactual == pytest.approx(0.4, rel=1e-14)
    assert res.ratio == pytest.approx(1.25)


def test_counterfactual_worked_example():
    # crossovers added 0.1 of log return while the mass ratio fell from 0.5 to 0.4
    ts, tb = np.array([1 / 3, 2 / 7]), np.array([2 / 3, 5 / 7])
    rel0, rel1 = 0.5, 0.4
    logs = np.array([0.0, 0.1 + math.log(rel1 / rel0)])
    d = decompose_small_vs_big(logs, np.zeros(2), ts, tb)
    res = A.counterfactual_theta(d, "sb")
    assert res.counterfactual == pytest.approx(rel0 * math.exp(-0.1), rel=1e-12)
    assert res.actual == pytest.approx(rel1)
    assert A.counterfactual_round_trip(d, res) == pytest.approx(0.0, abs=1e-12)
    assert res.relative_log_value(rel1) == pytest.approx(logs[-1], abs=1e-12)


def test_counterfactual_round_trip_on_backtest(rank_backtests, rank_panel):
    bt = rank_backtests
    d = decompose_backtest(bt["market"], bt["small"], bt["big"], rank_panel.values())
    for series in (d.small_vs_market, d.small_vs_big, d.big_vs_market):
        res = A.counterfactual_theta(series)
        assert abs(A.counterfactual_round_trip(series, res)) <= 1e-12
    text = A.format_counterfactual_table([A.counterfactual_theta(d.small_vs_market)])
    assert "counterfactual" in text and "actual" in text
    with pytest.raises(A.AnalyticsError):
        A.counterfactual_theta(d.small_vs_market, "sb")
    with pytest.raises(A.AnalyticsError):
        A.counterfactual_theta(d.small_vs_market, "nonsense")


# --- value anomaly ----------------------------------------------------------


def _daily_panel(prices: dict, start="2000-01-03") -> PricePanel:
    n = len(next(iter(prices.values())))
    idx = pd.bdate_range(start, periods=n, name="date")
    frame = pd.DataFrame(prices, index=idx)
    return PricePanel(frame, pd.Series(idx[0], index=frame.columns), idx[0])


def test_value_ratio_of_flat_price_is_one():
    panel = _daily_panel({"A": np.ones(1800), "B": np.linspace(1, 2, 1800)})
    ratios = A.value_ratios(panel)
    first_valid = ratios["A"].first_valid_index()
    assert first_valid >= panel.dates[0] + pd.DateOffset(months=66)
    assert np.allclose(ratios["A"].dropna(), 1.0)
    assert ratios["B"].dropna().gt(1).all()
    with pytest.raises(A.AnalyticsError):
        A.value_ratios(panel, (5.5, 4.5))


def test_halved_asset_is_high_value():
    n = 1800
    halved = np.r_[np.ones(n - 20), np.full(20, 0.5)]
    panel = _daily_panel({"A": np.ones(n), "B": np.ones(n), "C": halved, "D": np.ones(n) * 1.01})
    rk = A.value_ranking(panel, panel.dates[-1])
    assert "C" in rk.high_value
    assert rk.ratio["C"] == pytest.approx(0.5)
    assert len(rk.low_value) == 2


def test_identical_paths_have_zero_anomaly():
    rng = np.random.default_rng(0)
    path = np.exp(np.cumsum(rng.normal(0, 0.01, 2200)))
    panel = _daily_panel({k: path for k in "ABCD"})
    va = A.value_anomaly_series(panel)
    assert len(va.excess) > 0
    assert np.allclose(va.excess, 0.0, atol=1e-15)
    frame = va.to_frame()
    assert list(frame.columns) == ["high_value", "low_value", "value_anomaly"]


def test_value_anomaly_tracks_small_excess_in_rank_market(rank_panel, rank_backtests):
    va = A.value_anomaly_series(rank_panel)
    r = {k: v.monthly_returns() for k, v in rank_backtests.items()}
    y, x = va.excess.align(A.relative_returns(r["small"], r["market"]), join="inner")
    assert len(y) > 200
    assert np.corrcoef(y, x)[0, 1] > 0.3
    fit = A.ols(100 * y, 100 * x)
    assert fit.slope > 0 and fit.slope_stars == "***"
    assert "adjusted R2" in A.format_regression_table({"small_vs_market": fit})


# --- regression -------------------------------------------------------------


def test_exact_line():
    x = np.arange(10.0)
    fit = A.ols(2 * x + 1, x)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(1.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.slope_stars == "***"


def test_normal_equations_and_textbook_errors():
    rng = np.random.default_rng(3)
    x = rng.normal(size=40)
    y = 0.5 + 1.5 * x + rng.normal(size=40)
    fit = A.ols(y, x)
    assert abs(fit.residuals.sum()) < 1e-10
    assert abs(fit.residuals @ x) < 1e-10
    s2 = fit.residuals @ fit.residuals / 38
    assert fit.slope_se == pytest.approx(math.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    assert fit.adj_r2 < fit.r2
    assert set(fit.to_frame().columns) == {"estimate", "std_error", "p_value", "stars"}


def test_regression_errors():
    with pytest.raises(A.AnalyticsError):
        A.ols([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    with pytest.raises(A.AnalyticsError):
        A.ols([1.0, 2.0], [0.0, 1.0])
    with pytest.raises(A.AnalyticsError):
        A.ols([1.0, 2.0, 3.0], [0.0, 1.0])


@pytest.mark.parametrize("p, stars", [(0.2, ""), (0.04, "*"), (0.005, "**"), (0.0001, "***")])
def test_stars(p, stars):
    assert A.significance_stars(p) == stars


# --- start-date sweep -------------------------------------------------------


def test_quarterly_grid(staggered_raw):
    grid = A.quarterly_grid(staggered_raw, end="2001-12-31")
    assert list(grid.month) == [1, 4, 7, 10, 1, 4, 7, 10]
    assert grid[0] == pd.Timestamp("2000-01-03")


def test_single_date_sweep_matches_direct_run(staggered_raw, staggered_panel):
    start = staggered_panel.start_date
    res = A.start_date_sweep(staggered_raw, [start])
    direct = A.relative_sharpes(staggered_panel)
    assert res.table.loc[0, ["sharpe_vs_market", "sharpe_vs_big"]].tolist() == pytest.approx(list(direct))
    assert res.average == pytest.approx(direct)


def test_sweep_records_failures_and_is_deterministic(staggered_raw):
    dates = ["2000-01-03", "2022-01-03", "2030-01-01"]
    a = A.start_date_sweep(staggered_raw, dates)
    b = A.start_date_sweep(staggered_raw, dates)
    pd.testing.assert_frame_equal(a.table, b.table)
    assert a.table["error"].iloc[0] == ""
    # too late to ever form portfolios, and past the end of data
    assert a.table["error"].iloc[1] != "" and a.table["error"].iloc[2] != ""
    assert np.isfinite(a.average[0])


def test_variation_contrast(rank_backtests, rank_panel):
    bt = rank_backtests
    d = decompose_backtest(bt["market"], bt["small"], bt["big"], rank_panel.values()).small_vs_market
    cov_lt, cov_rel = A.variation_contrast(d)
    assert cov_lt > 0 and cov_rel > 0
    assert A.variation_contrast(d, stride=21)[0] < cov_lt


def test_sample_inside_one_decade_has_only_the_full_window():
    idx = pd.date_range("2003-01-31", "2006-12-31", freq="ME")
    assert [w.label for w in A.decade_windows(idx)] == ["2003-2006"]
