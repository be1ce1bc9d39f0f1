"""CLI entry point: crn-regimes."""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import runs
from .config import load_network, scaling_from
from .harness import ExperimentConfig, default_initial, run_experiment
from .limits import (
    default_time_step,
    fixed_point,
    integrate,
    limiting_ode,
    production_limit,
    stability_report,
)
from .model import RATE_NAMES, KineticParams, Regime, build_network, classify_regime, condition_value, coerce_regime
from .model import default_state_cap, state_validator, validate_state
from .queues import fastinv_dist, regime_fast_dist
from .ssa import simulate, write_csv, write_metadata


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TOLERANCE = 2


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(args, payload: dict, lines: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def cmd_classify(args) -> int:
    _, params, C_M, C_U, regulated = load_network(args.config)
    regime = classify_regime(params, C_M, C_U, regulated)
    phi = condition_value(params, C_M)
    payload = {"regime": regime.value, "phi": phi, "C_U": C_U, "regulated": regulated}
    lines = [regime.value, f"phi={phi:.6g}  C_U={C_U:g}  k_0Q/k_IL={params.k_0Q / params.k_IL:.6g}"]
    if regime is not Regime.BOUNDARY:
        fixed = fixed_point(regime, params, C_M, C_U)
        report = stability_report(regime, params, C_M, C_U)
        payload.update(
            fixed_point=fixed.tolist(),
            real_parts=list(report.real_parts),
            stable=report.stable,
            coefficients=list(report.coefficients) if report.coefficients else None,
        )
        lines.append("fixed point: " + ", ".join(f"{v:.6g}" for v in fixed))
        lines.append("eigenvalue real parts: " + ", ".join(f"{v:.6g}" for v in report.real_parts)
                     + ("  (stable)" if report.stable else "  (unstable)"))
        if report.coefficients:
            lines.append("polynomial coefficients: " + ", ".join(f"{v:.6g}" for v in report.coefficients))
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc, params, C_M, C_U, regulated = load_network(args.config)
    scaling = scaling_from(doc, args.N)
    if args.initial:
        initial = validate_state(args.initial, scaling)
    else:
        regime = classify_regime(params, C_M, C_U, regulated)
        config = ExperimentConfig(params=params, C_M=C_M, C_U=C_U, N_list=(scaling.N,),
                                  horizon=args.horizon, regulated=regulated)
        initial = default_initial(regime, scaling, config)
    channels = build_network(params, scaling, regulated)
    traj = simulate(
        channels,
        initial,
        args.horizon,
        args.seed,
        cap=default_state_cap(scaling),
        validate=state_validator(scaling, regulated) if args.check else None,
        metadata={"params": params.as_dict(), "scaling": scaling.as_dict(), "regulated": regulated},
    )
    grid = None
    if args.grid_points:
        grid = np.linspace(0.0, args.horizon, args.grid_points)
    out = Path(args.out)
    write_csv(traj, out, grid)
    write_metadata(traj, out.with_suffix(".json"))
    print(f"{traj.event_count} events, P(T)={traj.final_production} -> {out}")
    return EXIT_OK


def cmd_ode(args) -> int:
    _, params, C_M, C_U, regulated = load_network(args.config)
    regime = coerce_regime(args.regime) if args.regime else classify_regime(params, C_M, C_U, regulated)
    system = limiting_ode(regime, params, C_M, C_U, regulated)
    x0 = args.x0 if args.x0 else fixed_point(regime, params, C_M, C_U)
    sol = integrate(system, x0, args.horizon, args.dt or default_time_step(params))
    sol.to_csv(args.out, production=production_limit(regime, params, sol))
    if sol.exited:
        print(f"left the region {system.region} at t={sol.exit_time:g}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{regime.value}: {len(sol.times)} points, dt={sol.dt:g} -> {args.out}")
    return EXIT_OK


def cmd_fastdist(args) -> int:
    if args.fastinv:
        if len(args.fastinv) != 4:
            raise ValueError("--fastinv takes lambda,mu_R,mu_L,mu_U")
        dist = fastinv_dist(*args.fastinv)
    else:
        if not args.config or not args.slow:
            raise ValueError("either --fastinv or both --config and --slow are required")
        _, params, C_M, C_U, regulated = load_network(args.config)
        regime = coerce_regime(args.regime) if args.regime else classify_regime(params, C_M, C_U, regulated)
        dist = regime_fast_dist(regime, params, C_M, C_U, args.slow)
    dist.to_csv(args.out)
    mean = ", ".join(f"{v:.6g}" for v in dist.mean())
    print(f"{dist.label}: mean ({mean}), tail {dist.tail_mass:.2e} -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.out:
        overrides["output_dir"] = args.out
    if args.workers:
        overrides["workers"] = args.workers
    if overrides:
        config = dataclasses.replace(config, **overrides)
    previous = runs.runs_for_config(config.as_dict(), home=args.home) if args.record else []
    if previous:
        logger.info("config already verified %d time(s)", len(previous))
    report = run_experiment(config)
    for entry in report.per_n:
        flags = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in entry["pass"].items())
        print(
            f"N={entry['N']}: slow {entry['slow_sup_mean']:.4f} (p90 {entry['slow_sup_p90']:.4f}), "
            f"fast TV {entry['fast_tv']:.4f}, production {entry['production_rel_mean']:.4f}  {flags}"
        )
    print(f"{report.regime}: monotone={report.monotone} passed={report.passed}")
    if args.record:
        run_id = runs.record_run(report.to_dict(), args.config, config.output_dir, home=args.home)
        print(f"run {run_id}")
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def _axis(text: str):
    name, _, rest = text.partition("=")
    if name not in RATE_NAMES + ("C_M", "C_U"):
        raise argparse.ArgumentTypeError(f"unknown sweep parameter {name!r}")
    parts = rest.split(":")
    try:
        if len(parts) == 3:
            values = np.linspace(float(parts[0]), float(parts[1]), int(parts[2])).tolist()
        else:
            values = [float(v) for v in rest.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=START:STOP:COUNT or NAME=v1,v2,..., got {text!r}") from None
    return name, values


def cmd_sweep(args) -> int:
    _, params, C_M, C_U, regulated = load_network(args.config)
    names = [name for name, _ in args.axis]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    counts = {}
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([*names, "regime", "phi", "rho"])
        for point in np.array(np.meshgrid(*(v for _, v in args.axis), indexing="ij")).reshape(len(names), -1).T:
            values = dict(zip(names, point.tolist()))
            rates = {**params.as_dict(), **{k: v for k, v in values.items() if k in RATE_NAMES}}
            p = KineticParams(**rates)
            c_m = values.get("C_M", C_M)
            c_u = values.get("C_U", C_U)
            regime = classify_regime(p, c_m, c_u, regulated)
            counts[regime.value] = counts.get(regime.value, 0) + 1
            writer.writerow([*(repr(v) for v in point.tolist()), regime.value,
                             repr(condition_value(p, c_m)), repr(p.k_0Q / p.k_IL)])
    print(", ".join(f"{k}: {v}" for k, v in sorted(counts.items())) + f" -> {out}")
    return EXIT_OK


def cmd_runs(args) -> int:
    rows = runs.list_runs(limit=args.limit, regime=args.regime, home=args.home)
    if not rows:
        print(f"no runs recorded in {runs.registry_path(args.home)}")
        return EXIT_OK
    for row in rows:
        status = "passed" if row["passed"] else "FAILED"
        print(f"{row['run_id'][:8]}  {row['created_at'][:19]}  {row['regime']:<22} "
              f"seed={row['base_seed']}  N<={row['n_max']}  {status}  {row['output_dir']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crn-regimes",
        description="Simulate the regulated reaction network and check its scaling limits.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="Print the regime, phi, fixed point and stability")
    p.add_argument("--config", required=True, metavar="FILE", help="Parameter JSON")
    p.add_argument("--json", action="store_true", help="Print JSON instead of text")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", help="Simulate one trajectory to CSV")
    p.add_argument("--config", required=True, metavar="FILE", help="Parameter JSON (N may be given here)")
    p.add_argument("--N", type=int, default=None, help="Scaling parameter (overrides the config)")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial", type=_ints, default=None, metavar="S,R,L,Q,U",
                   help="Initial state (default: the regime's initial condition)")
    p.add_argument("--grid-points", type=int, default=0,
                   help="Sample on a uniform grid instead of writing every event")
    p.add_argument("--check", action="store_true", help="Check conservation laws at every event")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ode", help="Integrate the limiting ODE to CSV")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--regime", default=None, help="Regime (default: classified from the config)")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--dt", type=float, default=None, help="Step size (default: 1e-3 / largest rate)")
    p.add_argument("--x0", type=_floats, default=None, help="Initial slow state (default: fixed point)")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("fastdist", help="Write a fast invariant law to CSV")
    p.add_argument("--fastinv", type=_floats, default=None, metavar="LAMBDA,MU_R,MU_L,MU_U")
    p.add_argument("--config", default=None, metavar="FILE")
    p.add_argument("--regime", default=None)
    p.add_argument("--slow", type=_floats, default=None, help="Frozen slow variables")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=cmd_fastdist)

    p = sub.add_parser(
        "verify",
        help="Run a convergence experiment from a JSON config",
        description="Run a convergence experiment. The run is recorded in the registry "
                    "($CRN_REGIMES_HOME or ~/.crn-regimes/runs.db) unless --no-record is given.",
    )
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--seed", type=int, default=None, help="Override base_seed")
    p.add_argument("--out", default=None, metavar="DIR", help="Override output_dir")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--home", default=None, help="Run registry directory (default: $CRN_REGIMES_HOME or ~/.crn-regimes)")
    p.add_argument("--no-record", dest="record", action="store_false",
                   help="Do not write the run to the registry (recording is on by default)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="Classify a parameter grid to CSV")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--axis", type=_axis, action="append", required=True,
                   metavar="NAME=START:STOP:COUNT", help="Swept parameter; repeat for a 2-d map")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("runs", help="List recorded verification runs")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--regime", default=None)
    p.add_argument("--home", default=None)
    p.set_defaults(func=cmd_runs)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def run() -> None:
    sys.exit(main())
