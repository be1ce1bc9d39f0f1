"""MCP tool handler implementations."""

import json
from typing import Any, Dict, List, Optional

import numpy as np
import mcp.types as types

from . import runs
from .config import ConfigDocument, params_from, ratios_from
from .limits import default_time_step, fixed_point, integrate, limiting_ode, production_limit, stability_report
from .model import Regime, classify_regime, coerce_regime, regime_summary
from .queues import regime_fast_dist


MAX_ATOMS = 20
MAX_SAMPLES = 1000


def _text(data: Any) -> List[types.TextContent]:
    return [types.TextContent(type="text", text=json.dumps(data, indent=2, default=str))]


def _network(args: Dict[str, Any]):
    """Rates, ratios and regulation flag from tool arguments.

    Rates may be passed flat or under "params", like parameter files.
    """
    doc = ConfigDocument(args, path="<arguments>")
    rates = doc.child("params") if "params" in args else doc
    C_M, C_U = ratios_from(doc)
    return params_from(rates), C_M, C_U, doc.boolean("regulated", True)


def _regime(args: Dict[str, Any], params, C_M: float, C_U: float, regulated: bool) -> Regime:
    if args.get("regime"):
        return coerce_regime(args["regime"])
    regime = classify_regime(params, C_M, C_U, regulated)
    if regime is Regime.BOUNDARY:
        raise ValueError("parameters lie on a regime boundary; no limiting dynamics are defined there")
    return regime


def _stability(regime: Regime, params, C_M: float, C_U: float) -> Dict[str, Any]:
    report = stability_report(regime, params, C_M, C_U)
    return {
        "fixed_point": list(report.fixed_point),
        "real_parts": list(report.real_parts),
        "stable": report.stable,
        "coefficients": list(report.coefficients) if report.coefficients else None,
        "trace": report.trace,
        "determinant": report.determinant,
    }


class MCPToolHandlers:
    """Async handlers behind the crn-regimes MCP tools.

    Each returns JSON text; failures come back as {"error": ...}.
    """

    async def handle_classify(self, args: Dict[str, Any]) -> List[types.TextContent]:
        try:
            params, C_M, C_U, regulated = _network(args)
            summary = regime_summary(params, C_M, C_U, regulated)
            regime = coerce_regime(summary["regime"])
            if regime is not Regime.BOUNDARY:
                summary.update(_stability(regime, params, C_M, C_U))
        except (ValueError, AssertionError) as e:
            return _text({"error": str(e)})
        return _text(summary)

    async def handle_fixed_point(self, args: Dict[str, Any]) -> List[types.TextContent]:
        try:
            params, C_M, C_U, regulated = _network(args)
            regime = _regime(args, params, C_M, C_U, regulated)
            point = fixed_point(regime, params, C_M, C_U)
            stability = _stability(regime, params, C_M, C_U)
        except (ValueError, AssertionError) as e:
            return _text({"error": str(e)})
        return _text({
            "regime": regime.value,
            "coordinates": list(limiting_ode(regime, params, C_M, C_U, regulated).coordinates),
            "fixed_point": point.tolist(),
            **{k: v for k, v in stability.items() if k != "fixed_point"},
        })

    async def handle_fast_distribution(self, args: Dict[str, Any]) -> List[types.TextContent]:
        slow = args.get("slow")
        if not isinstance(slow, list) or not slow:
            return _text({"error": "slow must be a non-empty list of scaled slow values"})
        max_atoms = int(args.get("max_atoms", MAX_ATOMS))
        try:
            params, C_M, C_U, regulated = _network(args)
            regime = _regime(args, params, C_M, C_U, regulated)
            dist = regime_fast_dist(regime, params, C_M, C_U, [float(v) for v in slow])
        except ValueError as e:
            return _text({"error": str(e)})
        atoms = sorted(dist.atoms(), key=lambda a: -a[1])[:max_atoms]
        return _text({
            "regime": regime.value,
            "law": dist.label,
            "coordinates": list(dist.coordinates),
            "mean": dist.mean().tolist(),
            "cov": dist.cov().tolist(),
            "tail_mass": dist.tail_mass,
            "atoms": [{"point": list(point), "probability": p} for point, p in atoms],
        })

    async def handle_integrate_limit(self, args: Dict[str, Any]) -> List[types.TextContent]:
        horizon = args.get("horizon")
        if not isinstance(horizon, (int, float)) or horizon < 0:
            return _text({"error": "horizon must be a number >= 0"})
        samples = int(args.get("samples", 11))
        if not 2 <= samples <= MAX_SAMPLES:
            return _text({"error": f"samples must be between 2 and {MAX_SAMPLES}"})
        try:
            params, C_M, C_U, regulated = _network(args)
            regime = _regime(args, params, C_M, C_U, regulated)
            system = limiting_ode(regime, params, C_M, C_U, regulated)
            x0: Optional[list] = args.get("x0")
            if x0 is None:
                x0 = fixed_point(regime, params, C_M, C_U).tolist()
            sol = integrate(system, x0, float(horizon), float(args.get("dt") or default_time_step(params)))
        except ValueError as e:
            return _text({"error": str(e)})
        times = np.linspace(0.0, float(sol.times[-1]), samples)
        states = sol.at(times)
        production = production_limit(regime, params, sol)(times)
        return _text({
            "regime": regime.value,
            "coordinates": list(system.coordinates),
            "region": system.region,
            "dt": sol.dt,
            "exit_time": sol.exit_time,
            "path": [
                {"t": float(t), "state": states[k].tolist(), "production": float(production[k])}
                for k, t in enumerate(times)
            ],
        })

    async def handle_list_runs(self, args: Dict[str, Any]) -> List[types.TextContent]:
        limit = int(args.get("limit", 10))
        rows = runs.list_runs(limit=limit, regime=args.get("regime"), home=args.get("home"))
        return _text({
            "registry": str(runs.registry_path(args.get("home"))),
            "count": len(rows),
            "runs": [dict(r) for r in rows],
        })
