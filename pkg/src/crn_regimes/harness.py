"""Experiment runner: simulation sweeps over N compared against the limit theorems."""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .config import (
    REQUIRED_EXPERIMENT_KEYS,
    ConfigDocument,
    ConfigError,
    experiment_defaults,
    load_document,
    params_from,
    ratios_from,
    save_json,
)
from .limits import OdeSolution, default_time_step, fixed_point, integrate, limiting_ode, production_limit
from .measures import OccupationAccumulator, OccupationMeasure, merge, normalize, tv_distance
from .model import (
    FAST_COORDINATES,
    REFLECTED_COORDINATES,
    SLOW_COORDINATES,
    AdmissibleRegionError,
    KineticParams,
    NetState,
    Regime,
    ScalingConfig,
    build_network,
    classify_regime,
    condition_value,
    default_state_cap,
    state_validator,
    validate_state,
)
from .queues import DiscreteDist, regime_fast_dist
from .ssa import GridRecorder, replica_seeds, simulate


logger = logging.getLogger(__name__)

SEED_RULE = "numpy.random.SeedSequence(base_seed).spawn(sum of replicas); replica i of the k-th N uses child k*replicas+i"


class BoundaryRegimeError(ValueError):
    """The parameters sit on a regime boundary, where no limit theorem applies."""


@dataclass(frozen=True)
class ExperimentConfig:
    params: KineticParams
    C_M: float
    C_U: float
    N_list: Tuple[int, ...]
    horizon: float
    regulated: bool = True
    replicas: int = 1
    grid_points: int = 200
    burn_in: float = 0.1
    fast_windows: int = 10
    initial: Mapping[str, Any] = field(default_factory=dict)
    base_seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    dt: Optional[float] = None
    check_invariants: bool = False
    tolerances: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.N_list:
            raise ValueError("N_list must not be empty")
        if any(n < 1 for n in self.N_list):
            raise ValueError(f"N_list entries must be positive, got {list(self.N_list)}")
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError(f"N_list must be strictly increasing, got {list(self.N_list)}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if not self.horizon >= 0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")
        if self.grid_points < 2:
            raise ValueError(f"grid_points must be >= 2, got {self.grid_points}")
        if not 0 <= self.burn_in < 1:
            raise ValueError(f"burn_in must be in [0, 1), got {self.burn_in}")
        if self.fast_windows < 1:
            raise ValueError(f"fast_windows must be >= 1, got {self.fast_windows}")

    @classmethod
    def from_document(cls, doc: ConfigDocument) -> "ExperimentConfig":
        for key in REQUIRED_EXPERIMENT_KEYS:
            doc.require(key)
        defaults = experiment_defaults()
        params = params_from(doc.child("params"))
        C_M, C_U = ratios_from(doc)
        n_list = doc.get("N_list")
        if not isinstance(n_list, list) or not all(isinstance(n, int) and not isinstance(n, bool) for n in n_list):
            raise doc.error("N_list", "'N_list' must be a list of integers")
        initial = {**defaults["initial"], **doc.child("initial").data}
        tolerances = {**defaults["tolerances"], **doc.child("tolerances").data}
        for key, value in tolerances.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                raise doc.error(key, f"tolerance '{key}' must be a nonnegative number, got {value!r}")
        dt = doc.get("dt")
        if dt is not None:
            dt = doc.number("dt", positive=True)
        try:
            return cls(
                params=params,
                C_M=C_M,
                C_U=C_U,
                N_list=tuple(n_list),
                horizon=doc.number("horizon", minimum=0),
                regulated=doc.boolean("regulated", defaults["regulated"]),
                replicas=doc.integer("replicas", defaults["replicas"], minimum=1),
                grid_points=doc.integer("grid_points", defaults["grid_points"], minimum=2),
                burn_in=doc.number("burn_in", defaults["burn_in"], minimum=0),
                fast_windows=doc.integer("fast_windows", defaults["fast_windows"], minimum=1),
                initial=initial,
                base_seed=doc.integer("base_seed", defaults["base_seed"], minimum=0),
                output_dir=str(doc.get("output_dir", defaults["output_dir"])),
                workers=doc.integer("workers", defaults["workers"], minimum=1),
                dt=dt,
                check_invariants=doc.boolean("check_invariants", defaults["check_invariants"]),
                tolerances=tolerances,
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            key = str(e).split(" ", 1)[0]
            raise doc.error(key, str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_document(load_document(path))

    def scaling(self, N: int) -> ScalingConfig:
        return ScalingConfig.from_ratios(N, self.C_M, self.C_U)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.as_dict(),
            "C_M": self.C_M,
            "C_U": self.C_U,
            "N_list": list(self.N_list),
            "horizon": self.horizon,
            "regulated": self.regulated,
            "replicas": self.replicas,
            "grid_points": self.grid_points,
            "burn_in": self.burn_in,
            "fast_windows": self.fast_windows,
            "initial": dict(self.initial),
            "base_seed": self.base_seed,
            "dt": self.dt,
            "check_invariants": self.check_invariants,
            "tolerances": dict(self.tolerances),
        }


def _fraction(initial: Mapping[str, Any], key: str, fallback: float) -> float:
    value = initial.get(key)
    return fallback if value is None else float(value)


def default_initial(regime: Regime, scaling: ScalingConfig, config: ExperimentConfig) -> NetState:
    """Integer state realizing the macroscopic initial condition the regime's limit theorem assumes.

    Unset fractions default to the regime's fixed point.
    """
    init = config.initial
    N = scaling.N
    r, l_small, q_small, u_small = (int(init.get(k) or 0) for k in ("r", "l", "q", "u_small"))
    fixed = fixed_point(regime, config.params, config.C_M, config.C_U)
    system = limiting_ode(regime, config.params, config.C_M, config.C_U, config.regulated)
    if regime is Regime.STABLE:
        macro = [_fraction(init, "q0", fixed[0])]
    elif regime is Regime.UNDER_LOADED:
        macro = [_fraction(init, "l0", fixed[0])]
    elif regime is Regime.OPTIMAL_SEQUESTRATION:
        factor = 1.0 + float(init.get("perturbation") or 0.0)
        macro = [_fraction(init, "s0", fixed[0] * factor), _fraction(init, "u0", fixed[1] * factor)]
    else:
        macro = [_fraction(init, "s0", fixed[0]), _fraction(init, "l0", fixed[1])]
    if not system.admissible(np.array(macro)):
        raise AdmissibleRegionError(f"initial fractions {macro} outside the region {system.region}")

    counts = [int(math.floor(v * N + 1e-9)) for v in macro]
    if regime is Regime.STABLE:
        state = (0, r, l_small, counts[0], u_small)
    elif regime is Regime.UNDER_LOADED:
        state = (0, r, counts[0], q_small, scaling.U0 - u_small)
    elif regime is Regime.OPTIMAL_SEQUESTRATION:
        state = (counts[0], r, l_small, q_small, counts[1])
    else:
        state = (counts[0], r, counts[1], q_small, scaling.U0 - u_small)
    try:
        return validate_state(state, scaling)
    except ValueError as e:
        raise AdmissibleRegionError(str(e)) from e


class ReplicaResult(NamedTuple):
    seed: Dict[str, object]
    samples: np.ndarray
    production: np.ndarray
    windows: List[OccupationMeasure]
    event_count: int


def _run_replica(job) -> ReplicaResult:
    channels, initial, horizon, seed, grid, windows, fast, reflect, validate, cap = job
    recorder = GridRecorder(grid)
    accumulator = OccupationAccumulator(NetState._fields, fast, windows, reflect)
    traj = simulate(
        channels,
        initial,
        horizon,
        seed,
        cap=cap,
        record_events=False,
        observers=(recorder, accumulator),
        validate=validate,
    )
    samples = np.array([s for s, _ in recorder.samples], dtype=np.int64)
    production = np.array([p for _, p in recorder.samples], dtype=np.int64)
    return ReplicaResult(traj.seed, samples, production, accumulator.measures(), traj.event_count)


def _run_all(jobs, workers: int) -> List[ReplicaResult]:
    if workers <= 1 or len(jobs) == 1:
        return [_run_replica(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_replica, jobs))


@dataclass
class ConvergenceReport:
    regime: str
    phi: float
    base_seed: int
    seed_rule: str
    config: Dict[str, Any]
    per_n: List[Dict[str, Any]] = field(default_factory=list)
    monotone: bool = True
    passed: bool = True
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime,
            "phi": self.phi,
            "base_seed": self.base_seed,
            "seed_rule": self.seed_rule,
            "config": self.config,
            "per_n": self.per_n,
            "monotone": self.monotone,
            "passed": self.passed,
            "notes": self.notes,
        }


def _mixture(dists: List[DiscreteDist]) -> DiscreteDist:
    shape = tuple(max(d.shape[i] for d in dists) for i in range(dists[0].dim))
    table = sum(d.padded(shape) for d in dists) / len(dists)
    return DiscreteDist(
        table,
        tail_mass=max(d.tail_mass for d in dists),
        coordinates=dists[0].coordinates,
        label="time_average",
    )


def _slow_indices(regime: Regime) -> List[int]:
    return [NetState._fields.index(c) for c in SLOW_COORDINATES[regime]]


def _write_slow_csv(path: Path, regime: Regime, grid, N: int, results, ode_path, prod_limit) -> None:
    names = SLOW_COORDINATES[regime]
    indices = _slow_indices(regime)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["replica", "t", *(f"{c}_N" for c in names), *(f"{c}_ode" for c in names), "P_N", "P_limit"])
        for i, res in enumerate(results):
            for k, t in enumerate(grid):
                row = [i, repr(float(t))]
                row += [repr(float(res.samples[k, j]) / N) for j in indices]
                row += [repr(float(v)) for v in ode_path[k]]
                row += [repr(float(res.production[k]) / N), repr(float(prod_limit[k]))]
                writer.writerow(row)


def _write_fast_csv(path: Path, windows, per_window) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["window", "t0", "t1", "tv_mean", "tv_pooled"])
        for k, ((a, b), (tv_mean, tv_pooled)) in enumerate(zip(windows, per_window)):
            writer.writerow([k, repr(a), repr(b), repr(tv_mean), repr(tv_pooled)])


def _reference_path(sol: OdeSolution, grid) -> np.ndarray:
    return sol.at(np.minimum(grid, sol.times[-1]))


def run_experiment(config: ExperimentConfig) -> ConvergenceReport:
    """Simulate every N in the sweep and compare against the regime's limits.

    Writes per-N CSVs and report.json under config.output_dir.
    """
    regime = classify_regime(config.params, config.C_M, config.C_U, config.regulated)
    if regime is Regime.BOUNDARY:
        raise BoundaryRegimeError("parameters lie on a regime boundary; no limit theorem applies")
    tol = config.tolerances
    report = ConvergenceReport(
        regime=regime.value,
        phi=condition_value(config.params, config.C_M),
        base_seed=config.base_seed,
        seed_rule=SEED_RULE,
        config=config.as_dict(),
    )
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.horizon == 0:
        report.notes.append("horizon is zero: nothing to compare")
        save_json(report.to_dict(), out / "report.json")
        return report

    grid = np.linspace(0.0, config.horizon, config.grid_points)
    start = config.burn_in * config.horizon
    edges = np.linspace(start, config.horizon, config.fast_windows + 1)
    windows = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    dt = config.dt or default_time_step(config.params)
    system = limiting_ode(regime, config.params, config.C_M, config.C_U, config.regulated)
    seeds = replica_seeds(config.base_seed, config.replicas * len(config.N_list))
    fast = FAST_COORDINATES[regime]
    slow_idx = _slow_indices(regime)

    for k, N in enumerate(config.N_list):
        scaling = config.scaling(N)
        initial = default_initial(regime, scaling, config)
        x0 = np.array([initial[j] for j in slow_idx], dtype=float) / N
        sol = integrate(system, x0, config.horizon, dt)
        if sol.exited:
            raise AdmissibleRegionError(f"limit ODE left {system.region} at t={sol.exit_time} for N={N}")
        prod = production_limit(regime, config.params, sol)
        ode_path = _reference_path(sol, grid)
        prod_path = prod(grid)

        reflect = {c: scaling.U0 for c in REFLECTED_COORDINATES[regime]}
        references = [
            regime_fast_dist(regime, config.params, config.C_M, config.C_U, sol.at(0.5 * (a + b)))
            for a, b in windows
        ]
        channels = build_network(config.params, scaling, config.regulated)
        validate = state_validator(scaling, config.regulated) if config.check_invariants else None
        jobs = [
            (channels, initial, config.horizon, seeds[k * config.replicas + i], grid, windows, fast, reflect,
             validate, default_state_cap(scaling))
            for i in range(config.replicas)
        ]
        logger.info("N=%d: %d replicas from %s", N, config.replicas, tuple(initial))
        results = _run_all(jobs, config.workers)

        slow_dev = []
        prod_dev = []
        prod_rel = []
        for res in results:
            scaled = res.samples[:, slow_idx] / N
            slow_dev.append(float(np.max(np.abs(scaled - ode_path))))
            scaled_p = res.production / N
            prod_dev.append(float(np.max(np.abs(scaled_p - prod_path))))
            prod_rel.append(abs(scaled_p[-1] - prod_path[-1]) / prod_path[-1] if prod_path[-1] > 0 else 0.0)

        per_window = []
        for w, ref in enumerate(references):
            tvs = [tv_distance(normalize(res.windows[w]), ref).distance for res in results]
            pooled = tv_distance(normalize(merge([res.windows[w] for res in results])), ref).distance
            per_window.append((float(np.mean(tvs)), pooled))
        occupation = merge([om for res in results for om in res.windows])
        average_ref = _mixture(references)
        fast_tv = tv_distance(normalize(occupation), average_ref)

        entry = {
            "N": N,
            "M0": scaling.M0,
            "U0": scaling.U0,
            "initial": list(initial),
            "dt": sol.dt,
            "seeds": [res.seed for res in results],
            "events": [res.event_count for res in results],
            "slow_sup_mean": float(np.mean(slow_dev)),
            "slow_sup_p90": float(np.percentile(slow_dev, 90)),
            "production_sup_mean": float(np.mean(prod_dev)),
            "production_rel_mean": float(np.mean(prod_rel)),
            "fast_tv": fast_tv.distance,
            "fast_tv_tail": fast_tv.tail_mass,
            "fast_tv_windows": [tv for tv, _ in per_window],
        }
        entry["pass"] = {
            "slow": entry["slow_sup_mean"] <= tol["slow_sup"],
            "fast": entry["fast_tv"] <= tol["fast_tv"],
            "production": entry["production_rel_mean"] <= tol["production_rel"],
        }
        report.per_n.append(entry)
        logger.info(
            "N=%d: slow %.4f, fast TV %.4f, production %.4f",
            N, entry["slow_sup_mean"], entry["fast_tv"], entry["production_rel_mean"],
        )

        _write_slow_csv(out / f"slow_N{N}.csv", regime, grid, N, results, ode_path, prod_path)
        _write_fast_csv(out / f"fast_N{N}.csv", windows, per_window)
        occupation.to_csv(out / f"occupation_N{N}.csv")
        sol.to_csv(out / f"ode_N{N}.csv", production=prod)

    means = [e["slow_sup_mean"] for e in report.per_n]
    slack = 1.0 + tol["monotone_slack"]
    report.monotone = all(b <= a * slack for a, b in zip(means, means[1:]))
    report.passed = report.monotone and all(report.per_n[-1]["pass"].values())
    save_json(report.to_dict(), out / "report.json")
    return report

