from __future__ import annotations

import io

import numpy as np
import pandas as pd
import pytest

from rankeffect.panel import RawPricePanel, load_raw_panel, normalize_panel
from rankeffect.synth import MarketModel, simulate, simulate_paths, to_panel

# Commodity futures universe: name, exchange, first trading month.
COMMODITIES = [
    ("Soybean Meal", "CBOT", "1969-01"),
    ("Soybean Oil", "CBOT", "1969-01"),
    ("Soybeans", "CBOT", "1969-01"),
    ("Wheat", "CBOT", "1969-01"),
    ("Corn", "CBOT", "1970-01"),
    ("Live Hogs", "CME", "1970-01"),
    ("Live Cattle", "CME", "1971-01"),
    ("Cotton", "NYBOT", "1973-01"),
    ("Orange Juice", "CEC", "1973-01"),
    ("Platinum", "NYMEX", "1973-01"),
    ("Silver", "COMEX", "1973-01"),
    ("Coffee", "CSC", "1974-01"),
    ("Lumber", "CME", "1974-01"),
    ("Gold", "COMEX", "1975-01"),
    ("Oats", "CBOT", "1975-01"),
    ("Sugar", "CSC", "1975-01"),
    ("Wheat, K.C.", "KCBT", "1977-01"),
    ("Feeder Cattle", "CME", "1978-01"),
    ("Heating Oil", "NYMEX", "1980-01"),
    ("Cocoa", "CSC", "1981-01"),
    ("Wheat, Minn.", "MGE", "1981-01"),
    ("Palladium", "NYMEX", "1983-01"),
    ("Crude Oil", "NYMEX", "1984-01"),
    ("RBOB Gasoline", "NYMEX", "1985-01"),
    ("Rough Rice", "CBOT", "1987-01"),
    ("Copper", "COMEX", "1989-01"),
    ("Natural Gas", "NYMEX", "1991-01"),
    ("Milk", "CME", "1997-09"),
    ("Brent Crude Oil", "ICE", "2008-08"),
    ("Brent Gasoil", "ICE", "2008-08"),
]


def commodity_csv(end: str = "2018-12-31", seed: int = 0) -> str:
    """Long-layout text with one quote per asset on the first business day of each month."""
    rng = np.random.default_rng(seed)
    dates = pd.date_range("1969-01-01", end, freq="BMS")
    lines = ["date,asset,price,exchange"]
    for name, exch, first in COMMODITIES:
        live = dates[dates >= pd.Timestamp(first)]
        logp = np.cumsum(rng.normal(0.0, 0.08, len(live))) + np.log(50.0)
        for d, lp in zip(live, logp):
            lines.append(f'{d.date()},"{name}",{np.exp(lp):.6f},{exch}')
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def commodity_raw() -> RawPricePanel:
    return load_raw_panel(io.StringIO(commodity_csv()))


@pytest.fixture(scope="session")
def fine_model() -> MarketModel:
    """10-asset symmetric Brownian market, 20 years at a tenth of a trading day."""
    return MarketModel(kind="gbm", n_assets=10, vol=0.3, dt=1 / 2520, horizon=20, seed=0)


@pytest.fixture(scope="session")
def fine_panel(fine_model):
    return simulate(fine_model)


@pytest.fixture(scope="session")
def daily_model() -> MarketModel:
    return MarketModel(kind="gbm", n_assets=8, vol=0.3, dt=1 / 252, horizon=25, seed=11)


def stagger(prices: pd.DataFrame, entries: dict[str, str]) -> pd.DataFrame:
    out = prices.copy()
    for col, first in entries.items():
        out.loc[out.index < pd.Timestamp(first), col] = np.nan
    return out


@pytest.fixture(scope="session")
def staggered_raw(daily_model) -> RawPricePanel:
    """Daily panel in raw units with three late entrants."""
    lp = simulate_paths(daily_model)[0]
    panel = to_panel(daily_model, lp + np.log(np.linspace(20.0, 90.0, daily_model.n_assets)))
    prices = stagger(panel.prices, {"A06": "2003-03-17", "A07": "2007-08-01", "A08": "2011-02-14"})
    return RawPricePanel(prices)


@pytest.fixture(scope="session")
def staggered_panel(staggered_raw):
    return normalize_panel(staggered_raw)


# ---------------------------------------------------------------------------
# Acceptance summary: one line per criterion in the terminal report
# ---------------------------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def acceptance():
    def record(criterion: str, passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE[criterion] = (status, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{status}  {key}: {detail}")
