import json
import math

import pytest

from crn_regimes import runs
from crn_regimes.mcp_server import handle_call_tool, handle_list_tools
from crn_regimes.mcp_tools import MCPToolHandlers


RATES = {"k_RS": 1.0, "k_SR": 1.0, "k_LR": 1.0, "k_Q0": 1.0, "k_0Q": 1.0, "k_RI": 1.0, "k_IL": 2.0, "k_QU": 1.0}
SEQUESTRATION = {"params": RATES, "C_M": 2.0, "C_U": 10.0}
STABLE = {"params": {**RATES, "k_0Q": 2.0, "k_IL": 1.0}, "C_M": 2.0, "C_U": 1.0}


@pytest.fixture
def handlers():
    return MCPToolHandlers()


def _payload(result):
    assert len(result) == 1
    return json.loads(result[0].text)


@pytest.mark.asyncio
async def test_classify(handlers):
    data = _payload(await handlers.handle_classify(SEQUESTRATION))
    assert data["regime"] == "OptimalSequestration"
    assert data["phi"] == pytest.approx(0.75)
    assert data["fixed_point"] == pytest.approx([0.5, 0.75])
    assert data["stable"] is True
    assert data["trace"] == pytest.approx(-14.0 / 9.0, abs=1e-6)


@pytest.mark.asyncio
async def test_classify_accepts_flat_rates(handlers):
    data = _payload(await handlers.handle_classify({**RATES, "C_M": 2.0, "C_U": 10.0, "regulated": False}))
    assert data["regime"] == "UnderLoaded"
    assert data["regulated"] is False


@pytest.mark.asyncio
async def test_classify_boundary_has_no_fixed_point(handlers):
    data = _payload(await handlers.handle_classify({**SEQUESTRATION, "C_U": 0.75}))
    assert data["regime"] == "Boundary"
    assert "fixed_point" not in data


@pytest.mark.asyncio
async def test_classify_reports_bad_input(handlers):
    data = _payload(await handlers.handle_classify({"params": RATES, "C_M": 0.5, "C_U": 1.0}))
    assert "C_M" in data["error"]
    data = _payload(await handlers.handle_classify({"C_M": 2.0, "C_U": 1.0}))
    assert "missing required key" in data["error"]


@pytest.mark.asyncio
async def test_fixed_point(handlers):
    data = _payload(await handlers.handle_fixed_point(STABLE))
    assert data["regime"] == "Stable"
    assert data["coordinates"] == ["q"]
    assert data["fixed_point"] == [1.0]
    assert data["real_parts"] == [-1.0]


@pytest.mark.asyncio
async def test_fixed_point_of_wrong_regime(handlers):
    data = _payload(await handlers.handle_fixed_point({**STABLE, "regime": "Saturation"}))
    assert "classify as Stable" in data["error"]


@pytest.mark.asyncio
async def test_fast_distribution(handlers):
    data = _payload(await handlers.handle_fast_distribution({**SEQUESTRATION, "slow": [0.5, 0.75], "max_atoms": 5}))
    assert data["coordinates"] == ["r", "l", "q"]
    assert data["mean"][2] == pytest.approx(4.0 / 3.0)
    assert len(data["atoms"]) == 5
    probs = [a["probability"] for a in data["atoms"]]
    assert probs == sorted(probs, reverse=True)


@pytest.mark.asyncio
async def test_fast_distribution_errors(handlers):
    data = _payload(await handlers.handle_fast_distribution(SEQUESTRATION))
    assert "slow" in data["error"]
    data = _payload(await handlers.handle_fast_distribution({**SEQUESTRATION, "C_U": 0.75, "slow": [0.5, 0.5]}))
    assert "boundary" in data["error"]


@pytest.mark.asyncio
async def test_integrate_limit(handlers):
    data = _payload(await handlers.handle_integrate_limit({**STABLE, "horizon": 1.0, "x0": [0.0], "dt": 1e-3}))
    assert data["exit_time"] is None
    assert len(data["path"]) == 11
    last = data["path"][-1]
    assert last["t"] == pytest.approx(1.0)
    assert last["state"][0] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-6)
    assert last["production"] == pytest.approx(1.0)


@pytest.mark.asyncio
async def test_integrate_limit_errors(handlers):
    data = _payload(await handlers.handle_integrate_limit({**STABLE, "horizon": -1}))
    assert "horizon" in data["error"]
    data = _payload(await handlers.handle_integrate_limit({**STABLE, "horizon": 1.0, "samples": 1}))
    assert "samples" in data["error"]
    data = _payload(await handlers.handle_integrate_limit({**STABLE, "horizon": 1.0, "x0": [-1.0]}))
    assert "outside the region" in data["error"]


@pytest.mark.asyncio
async def test_list_runs(handlers, tmp_path):
    data = _payload(await handlers.handle_list_runs({"home": str(tmp_path)}))
    assert data["count"] == 0
    runs.record_run(
        {"regime": "Stable", "base_seed": 3, "monotone": True, "passed": True, "config": {}, "per_n": []},
        home=tmp_path,
    )
    data = _payload(await handlers.handle_list_runs({"home": str(tmp_path), "regime": "Stable"}))
    assert data["count"] == 1
    assert data["runs"][0]["base_seed"] == 3
    assert data["registry"].endswith("runs.db")


@pytest.mark.asyncio
async def test_server_lists_every_tool():
    tools = await handle_list_tools()
    assert [t.name for t in tools] == ["classify", "fixed_point", "fast_distribution", "integrate_limit", "list_runs"]


@pytest.mark.asyncio
async def test_server_dispatch():
    data = _payload(await handle_call_tool("classify", STABLE))
    assert data["regime"] == "Stable"
    with pytest.raises(ValueError, match="Unknown tool"):
        await handle_call_tool("nope", {})
