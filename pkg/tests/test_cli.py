import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from rankeffect.cli import CliError, main, parse_cutoff, parse_lookback, parse_range
from rankeffect.panel import normalize_panel, write_long
from rankeffect.portfolio import PortfolioSpec, fold_backtest


@pytest.fixture(scope="module")
def panel_file(tmp_path_factory, staggered_raw):
    path = tmp_path_factory.mktemp("data") / "prices.csv"
    write_long(staggered_raw, path)
    return path


def _run(*argv) -> int:
    return main([str(a) for a in argv])


def test_option_parsers():
    assert parse_cutoff("half") == "half"
    assert parse_cutoff("3") == 3
    assert parse_range("2001-01-01:") == (pd.Timestamp("2001-01-01"), None)
    assert parse_range(None) == (None, None)
    assert parse_lookback("4.5:5.5") == (4.5, 5.5)
    for bad in ("0", "x"):
        with pytest.raises(CliError):
            parse_cutoff(bad)
    with pytest.raises(CliError):
        parse_lookback("5.5:4.5")


def test_backtest_outputs_match_reference_fold(tmp_path, panel_file, staggered_raw, capsys):
    assert _run("backtest", "--input", panel_file, "--out", tmp_path) == 0
    for name in ("market", "small", "big"):
        got = pd.read_csv(tmp_path / f"values_{name}.csv", index_col="date", parse_dates=True)
        # the CSV holds the panel at 15 significant digits, so compare with the reference
        # fold on the same (rounded) inputs
        states = fold_backtest(normalize_panel(staggered_raw), PortfolioSpec(name))
        ref = np.log([s.value for s in states])
        np.testing.assert_allclose(got["log_value"].to_numpy(), ref, rtol=0, atol=1e-12)
    stats = pd.read_csv(tmp_path / "stats.csv")
    assert {"market", "small", "big", "small_vs_market", "small_vs_big"} <= set(stats["series"])
    assert (tmp_path / "correlations.csv").exists()
    ET.parse(tmp_path / "charts" / "values.svg")
    out = capsys.readouterr().out
    assert "Sharpe" in out


def test_reruns_are_byte_identical(tmp_path, panel_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("decompose", "--input", panel_file, "--out", a) == 0
    assert _run("decompose", "--input", panel_file, "--out", b) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 7
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_decompose_closes_and_reports(tmp_path, panel_file, capsys):
    assert _run("decompose", "--input", panel_file, "--out", tmp_path, "--rebalance", "monthly") == 0
    for key in ("sm", "bm", "sb"):
        frame = pd.read_csv(tmp_path / f"decomp_{key}.csv")
        assert frame["residual"].abs().max() <= 1e-12
        ET.parse(tmp_path / "charts" / f"decomp_{key}.svg")
    lt = pd.read_csv(tmp_path / "local_time.csv")
    assert list(lt.columns) == ["date", "lambda_small", "lambda_big", "lambda_occupation"]
    assert "coefficient of variation" in capsys.readouterr().out


def test_full_cutoff_makes_big_the_market(tmp_path, panel_file, caplog):
    assert _run("backtest", "--input", panel_file, "--out", tmp_path, "--cutoff", 5, "--range", ":2007-12-31") == 0
    big = pd.read_csv(tmp_path / "values_big.csv")
    market = pd.read_csv(tmp_path / "values_market.csv")
    np.testing.assert_allclose(big["log_value"], market["log_value"], rtol=0, atol=1e-13)
    assert not (tmp_path / "values_small.csv").exists()
    assert "small portfolio skipped" in caplog.text


def test_counterfactual_round_trip(tmp_path, panel_file, capsys):
    assert _run("counterfactual", "--input", panel_file, "--out", tmp_path, "--round-trip") == 0
    out = capsys.readouterr().out
    residuals = [float(line.rsplit(":", 1)[1]) for line in out.splitlines() if line.startswith("round-trip")]
    assert len(residuals) == 2 and all(abs(r) <= 1e-12 for r in residuals)
    table = pd.read_csv(tmp_path / "counterfactual.csv")
    assert table["mode"].tolist() == ["small_vs_market", "small_vs_big"]


def test_value_anomaly_command(tmp_path, panel_file, capsys):
    assert _run("value-anomaly", "--input", panel_file, "--out", tmp_path) == 0
    frame = pd.read_csv(tmp_path / "value_anomaly.csv")
    assert {"high_value", "low_value", "value_anomaly", "small_vs_market"} <= set(frame.columns)
    reg = pd.read_csv(tmp_path / "regression.csv")
    assert set(reg["term"]) == {"intercept", "slope"}
    assert "observations" in capsys.readouterr().out


def test_sweep_has_one_row_per_grid_date(tmp_path, panel_file):
    args = ("sweep", "--input", panel_file, "--out", tmp_path, "--grid-start", "2000-01-01", "--grid-end", "2001-12-31")
    assert _run(*args) == 0
    table = pd.read_csv(tmp_path / "sweep.csv")
    assert len(table) == 8
    assert table["sharpe_vs_market"].notna().all()
    ET.parse(tmp_path / "charts" / "sweep.svg")


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--horizon", 2, "--n-assets", 4, "--seed", 5]
    assert _run(*args, "--out", tmp_path / "a") == 0
    assert _run(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "panel.csv").read_bytes() == (tmp_path / "b" / "panel.csv").read_bytes()
    assert (tmp_path / "a" / "charts" / "panel.svg").read_bytes() == (tmp_path / "b" / "charts" / "panel.svg").read_bytes()
    # the simulated panel feeds straight back into the pipeline
    assert _run("backtest", "--input", tmp_path / "a" / "panel.csv", "--wait-years", 0, "--out", tmp_path / "bt") == 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_assets": 3, "horizon": 1, "layout": "wide"}))
    assert _run("simulate", "--config", cfg, "--n-assets", 5, "--out", tmp_path) == 0
    header = (tmp_path / "panel.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 6  # date plus five assets: the flag beat the file
    yml = tmp_path / "cfg.yaml"
    yml.write_text("n_assets: 3\nhorizon: 1\nlayout: wide\n")
    assert _run("simulate", "--config", yml, "--out", tmp_path / "y") == 0
    assert len((tmp_path / "y" / "panel.csv").read_text().splitlines()[0].split(",")) == 4
    bad = tmp_path / "bad.yaml"
    bad.write_text("not_an_option: 1\n")
    assert _run("simulate", "--config", bad, "--out", tmp_path / "z") == 1


def test_errors_exit_non_zero(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,asset,price\n2020-01-01,X,10\n2020-01-02,X,-1\n")
    assert _run("backtest", "--input", bad, "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "error" in err and "X" in err
    assert _run("backtest", "--out", tmp_path) == 1
    assert _run("backtest", "--input", tmp_path / "missing.csv", "--out", tmp_path) == 1
