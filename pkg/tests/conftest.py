import json
from pathlib import Path

import pytest

from crn_regimes.model import KineticParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def _rates(**overrides) -> KineticParams:
    rates = dict(k_RS=1.0, k_SR=1.0, k_LR=1.0, k_Q0=1.0, k_0Q=1.0, k_RI=1.0, k_IL=1.0, k_QU=1.0)
    rates.update(overrides)
    return KineticParams(**rates)


@pytest.fixture
def unit_params() -> KineticParams:
    return _rates()


@pytest.fixture
def stable_params() -> KineticParams:
    """k_0Q=2 > k_IL=1; with C_M=2, C_U=1 the slow ODE is q' = 1 - q."""
    return _rates(k_0Q=2.0, k_IL=1.0)


@pytest.fixture
def sequestration_params() -> KineticParams:
    """With C_M=2, C_U=10: phi = 0.75, fixed point (0.5, 0.75)."""
    return _rates(k_0Q=1.0, k_IL=2.0)


@pytest.fixture
def saturation_params() -> KineticParams:
    """With C_M=2, C_U=0.25: phi = 0.4375, fixed point (0.5, 0.25)."""
    return _rates(k_0Q=3.0, k_IL=12.0)


@pytest.fixture
def configs_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def write_json(tmp_path):
    def _write(name: str, payload) -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload, indent=2))
        return path

    return _write
