"""Limiting ODEs of the four regimes, RK4 integration, fixed points and stability."""

import csv
import logging
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import (
    AdmissibleRegionError,
    InvariantViolation,
    KineticParams,
    Regime,
    SLOW_COORDINATES,
    classify_regime,
    condition_value,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OdeSystem:
    regime: Regime
    coordinates: Tuple[str, ...]
    rhs: Callable[[float, np.ndarray], np.ndarray]
    admissible: Callable[[np.ndarray], bool]
    region: str

    @property
    def dimension(self) -> int:
        return len(self.coordinates)


@dataclass
class OdeSolution:
    """States on a uniform grid; ``exit_time`` marks the first step that left the region."""

    system: OdeSystem
    times: np.ndarray
    states: np.ndarray
    dt: float
    method: str = "rk4"
    exit_time: Optional[float] = None

    @property
    def exited(self) -> bool:
        return self.exit_time is not None

    def at(self, t) -> np.ndarray:
        """Linear interpolation between grid states."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError(f"time outside the solved interval [0, {self.times[-1]}]")
        columns = [np.interp(t, self.times, self.states[:, i]) for i in range(self.states.shape[1])]
        return np.stack(columns, axis=-1)

    def to_csv(self, path, production: Optional[Callable] = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ["t", *self.system.coordinates] + (["production"] if production else [])
        extra = production(self.times) if production else None
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t)), *(repr(float(v)) for v in self.states[k])]
                if extra is not None:
                    row.append(repr(float(extra[k])))
                writer.writerow(row)


def _stable_rhs(p: KineticParams, t: float, x: np.ndarray) -> np.ndarray:
    return np.array([p.k_0Q - p.k_IL - p.k_Q0 * x[0]])


def _under_loaded_rhs(p: KineticParams, t: float, x: np.ndarray) -> np.ndarray:
    return np.array([p.k_IL * (1.0 - x[0]) - p.k_0Q])


def _sequestration_rhs(p: KineticParams, C_M: float, t: float, x: np.ndarray) -> np.ndarray:
    s, u = x
    inflow = p.k_IL * (1.0 - s)
    ds = p.k_RS * u * (inflow + p.k_SR * s) / (p.k_RI * (C_M - 1.0 + s) + p.k_RS * u) - p.k_SR * s
    du = inflow - p.k_0Q
    return np.array([ds, du])


def _saturation_rhs(p: KineticParams, C_M: float, C_U: float, t: float, x: np.ndarray) -> np.ndarray:
    s, l = x
    ds = p.k_RS * C_U * (p.k_0Q + p.k_SR * s) / (p.k_RI * (C_M - 1.0 + s) + p.k_RS * C_U) - p.k_SR * s
    dl = p.k_IL * (1.0 - l - s) - p.k_0Q
    return np.array([ds, dl])


def _nonnegative(x: np.ndarray) -> bool:
    return bool(x[0] >= 0)


def _unit_interval(x: np.ndarray) -> bool:
    return bool(0 < x[0] < 1)


def _sequestration_region(C_U: float, x: np.ndarray) -> bool:
    return bool(0 < x[0] < 1 and 0 < x[1] < C_U)


def _saturation_region(x: np.ndarray) -> bool:
    return bool(x[0] > 0 and x[1] > 0 and x[0] + x[1] < 1)


def limiting_ode(
    regime: Regime, params: KineticParams, C_M: float, C_U: float, regulated: bool = True
) -> OdeSystem:
    """The slow-variable ODE of a regime; the regime must match the parameters."""
    if regime is Regime.BOUNDARY:
        raise AdmissibleRegionError("no limiting ODE on a regime boundary")
    actual = classify_regime(params, C_M, C_U, regulated)
    if actual is not regime:
        raise AdmissibleRegionError(
            f"parameters classify as {actual.value} (regulated={regulated}), not {regime.value}"
        )
    coordinates = SLOW_COORDINATES[regime]
    if regime is Regime.STABLE:
        return OdeSystem(regime, coordinates, partial(_stable_rhs, params), _nonnegative, "q >= 0")
    if regime is Regime.UNDER_LOADED:
        return OdeSystem(regime, coordinates, partial(_under_loaded_rhs, params), _unit_interval, "0 < l < 1")
    if regime is Regime.OPTIMAL_SEQUESTRATION:
        return OdeSystem(
            regime,
            coordinates,
            partial(_sequestration_rhs, params, C_M),
            partial(_sequestration_region, C_U),
            f"0 < s < 1, 0 < u < {C_U:g}",
        )
    return OdeSystem(
        regime,
        coordinates,
        partial(_saturation_rhs, params, C_M, C_U),
        _saturation_region,
        "s > 0, l > 0, s + l < 1",
    )


def default_time_step(params: KineticParams) -> float:
    return 1e-3 / params.max_rate()


def _rk4_step(rhs, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, x)
    k2 = rhs(t + h / 2, x + h / 2 * k1)
    k3 = rhs(t + h / 2, x + h / 2 * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(system: OdeSystem, x0: Sequence[float], horizon: float, dt: float) -> OdeSolution:
    """Classical RK4 with n = ceil(horizon/dt) equal steps.

    Stops at the first step that leaves the admissible region and records its time.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if not horizon >= 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != system.dimension:
        raise ValueError(f"initial state has {x.size} components, system has {system.dimension}")
    if not system.admissible(x):
        raise AdmissibleRegionError(f"initial state {x.tolist()} outside the region {system.region}")
    n = int(math.ceil(horizon / dt - 1e-9)) if horizon > 0 else 0
    h = horizon / n if n else float(dt)
    states = np.empty((n + 1, x.size))
    states[0] = x
    exit_time = None
    last = n
    for k in range(n):
        x = _rk4_step(system.rhs, k * h, x, h)
        if not (np.all(np.isfinite(x)) and system.admissible(x)):
            exit_time = (k + 1) * h
            last = k
            logger.debug("ODE left %s at t=%g", system.region, exit_time)
            break
        states[k + 1] = x
    times = np.arange(last + 1) * h
    return OdeSolution(system, times, states[: last + 1], h, exit_time=exit_time)


def saturation_level(params: KineticParams, C_M: float, C_U: float) -> float:
    """Positive root of the saturation quadratic."""
    p = params
    c = C_M - 1.0
    return 0.5 * (-c + math.sqrt(c * c + 4.0 * C_U * (p.k_0Q / p.k_RI) * (p.k_RS / p.k_SR)))


def fixed_point(regime: Regime, params: KineticParams, C_M: float, C_U: float) -> np.ndarray:
    p = params
    rho = p.k_0Q / p.k_IL
    if regime is Regime.STABLE:
        return np.array([(p.k_0Q - p.k_IL) / p.k_Q0])
    if regime is Regime.UNDER_LOADED:
        return np.array([1.0 - rho])
    if regime is Regime.OPTIMAL_SEQUESTRATION:
        return np.array([1.0 - rho, condition_value(p, C_M)])
    if regime is Regime.SATURATION:
        s = saturation_level(p, C_M, C_U)
        return np.array([s, 1.0 - rho - s])
    raise AdmissibleRegionError(f"no fixed point in the {regime.value} case")


def p1_coefficients(params: KineticParams, C_M: float, C_U: float) -> Tuple[float, float, float]:
    """Coefficients (s^2, s, 1) of the saturation quadratic."""
    p = params
    return (p.k_RI * p.k_SR, (C_M - 1.0) * p.k_RI * p.k_SR, -C_U * p.k_0Q * p.k_RS)


def p1(params: KineticParams, C_M: float, C_U: float, s: float) -> float:
    a2, a1, a0 = p1_coefficients(params, C_M, C_U)
    return a2 * s * s + a1 * s + a0


def p3_coefficients(params: KineticParams, C_M: float) -> Tuple[float, float, float]:
    """Coefficients (x^2, x, 1) of the sequestration fixed point's characteristic polynomial.

    A positive multiple of det(x I - J) for the Jacobian J of the (s, u) system.
    """
    p = params
    a2 = p.k_RI * (p.k_0Q * p.k_IL + p.k_SR * (p.k_IL - p.k_0Q)) * ((C_M - 1.0) * p.k_IL + p.k_IL - p.k_0Q)
    a1 = (C_M - 1.0) * p.k_IL ** 3 * p.k_RI * p.k_SR + p.k_IL * p.k_RI * p.k_SR * (p.k_IL ** 2 - p.k_0Q ** 2)
    a0 = p.k_IL ** 3 * p.k_RS * p.k_0Q ** 2
    return (a2, a1, a0)


def jacobian(system: OdeSystem, x: Sequence[float], rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the right-hand side at x."""
    x = np.asarray(x, dtype=float)
    jac = np.empty((x.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        jac[:, j] = (system.rhs(0.0, x + e) - system.rhs(0.0, x - e)) / (2 * h)
    return jac


class StabilityReport(NamedTuple):
    fixed_point: Tuple[float, ...]
    real_parts: Tuple[float, ...]
    stable: bool
    coefficients: Optional[Tuple[float, ...]]
    trace: Optional[float] = None
    determinant: Optional[float] = None


def stability_report(regime: Regime, params: KineticParams, C_M: float, C_U: float) -> StabilityReport:
    x = fixed_point(regime, params, C_M, C_U)
    regulated = regime is not Regime.UNDER_LOADED
    system = limiting_ode(regime, params, C_M, C_U, regulated)
    if not system.admissible(x):
        raise AdmissibleRegionError(f"fixed point {x.tolist()} outside the region {system.region}")
    if system.dimension == 1:
        slope = -params.k_Q0 if regime is Regime.STABLE else -params.k_IL
        return StabilityReport(tuple(x.tolist()), (slope,), slope < 0, None)

    jac = jacobian(system, x)
    trace = float(np.trace(jac))
    det = float(np.linalg.det(jac))
    disc = trace * trace - 4.0 * det
    if disc >= 0:
        root = math.sqrt(disc)
        real_parts = ((trace + root) / 2, (trace - root) / 2)
    else:
        real_parts = (trace / 2, trace / 2)

    if regime is Regime.OPTIMAL_SEQUESTRATION:
        coefficients = p3_coefficients(params, C_M)
        if params.k_IL > params.k_0Q and min(coefficients) <= 0:
            raise InvariantViolation(f"characteristic polynomial coefficients {coefficients} not all positive")
    else:
        coefficients = p1_coefficients(params, C_M, C_U)
    return StabilityReport(
        tuple(x.tolist()),
        real_parts,
        all(r < 0 for r in real_parts),
        coefficients,
        trace,
        det,
    )


def production_limit(regime: Regime, params: KineticParams, sol: OdeSolution) -> Callable:
    """Limit of P_N(t)/N as a vectorized function of t."""
    if sol.system.regime is not regime:
        raise AdmissibleRegionError(f"solution of the {sol.system.regime.value} ODE given for {regime.value}")
    if regime is Regime.STABLE:
        rate = params.k_IL
    elif regime in (Regime.UNDER_LOADED, Regime.SATURATION):
        rate = params.k_0Q
    else:
        cumulative = params.k_IL * cumulative_trapezoid(1.0 - sol.states[:, 0], sol.times, initial=0.0)
        return partial(_interpolated, sol.times, cumulative)
    return partial(_linear_in_time, rate)


def _linear_in_time(rate: float, t):
    return rate * np.asarray(t, dtype=float)


def _interpolated(times: np.ndarray, values: np.ndarray, t):
    t = np.asarray(t, dtype=float)
    if np.any(t > times[-1] + 1e-12) or np.any(t < 0):
        raise ValueError(f"time outside the solved interval [0, {times[-1]}]")
    return np.interp(t, times, values)
