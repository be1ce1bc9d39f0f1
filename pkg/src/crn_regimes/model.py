"""Reaction network definition: species counts, rates, channels and regime classification."""

import enum
import itertools
import math
from dataclasses import asdict, dataclass
from functools import partial
from typing import Callable, Iterator, List, NamedTuple, Optional, Tuple


RATE_NAMES = ("k_RS", "k_SR", "k_LR", "k_Q0", "k_0Q", "k_RI", "k_IL", "k_QU")

# Relative tolerance used to flag the excluded equalities of the classification.
BOUNDARY_RTOL = 1e-12


class InvariantViolation(AssertionError):
    """A channel with positive propensity would leave the state space."""


class AdmissibleRegionError(ValueError):
    """Slow variables or a regime outside the region where a limit law is defined."""


@dataclass(frozen=True)
class KineticParams:
    k_RS: float
    k_SR: float
    k_LR: float
    k_Q0: float
    k_0Q: float
    k_RI: float
    k_IL: float
    k_QU: float

    def __post_init__(self) -> None:
        for name in RATE_NAMES:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite rate, got {value!r}")

    def scaled(self, factor: float) -> "KineticParams":
        """All eight rates multiplied by the same factor."""
        return KineticParams(**{k: v * factor for k, v in asdict(self).items()})

    def max_rate(self) -> float:
        return max(asdict(self).values())

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScalingConfig:
    N: int
    M0: int
    U0: int
    C_M: float
    C_U: float

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if self.U0 < 1:
            raise ValueError(f"U0 must be a positive integer, got {self.U0}")
        if self.M0 < self.N:
            raise ValueError(
                f"M0={self.M0} < N={self.N}: the pairing rate k_RI*(M0-(N-r-s))*r would go negative"
            )
        if not self.C_M > 1:
            raise ValueError(f"C_M must be > 1, got {self.C_M}")
        if not self.C_U > 0:
            raise ValueError(f"C_U must be > 0, got {self.C_U}")

    @classmethod
    def from_ratios(cls, N: int, C_M: float, C_U: float) -> "ScalingConfig":
        """M0 and U0 rounded to the nearest integer of C_M*N and C_U*N."""
        return cls(N=N, M0=int(round(C_M * N)), U0=max(1, int(round(C_U * N))), C_M=C_M, C_U=C_U)

    def ratio_error(self) -> float:
        """Largest of |M0/N - C_M| and |U0/N - C_U|."""
        return max(abs(self.M0 / self.N - self.C_M), abs(self.U0 / self.N - self.C_U))

    def as_dict(self) -> dict:
        return {**asdict(self), "rounding": "nearest"}


class NetState(NamedTuple):
    """Free counts: sequestered R, free R, R in elongation, free Q, free U."""

    s: int
    r: int
    l: int
    q: int
    u: int


# Positions in the state tuple; helpers accept NetState or a plain tuple.
S, R, L, Q, U = range(5)


class ReactionChannel(NamedTuple):
    name: str
    jump: Tuple[int, ...]
    propensity: Callable[[tuple], float]
    produces: bool = False


class Regime(str, enum.Enum):
    STABLE = "Stable"
    OPTIMAL_SEQUESTRATION = "OptimalSequestration"
    SATURATION = "Saturation"
    UNDER_LOADED = "UnderLoaded"
    BOUNDARY = "Boundary"


def derived_counts(x: NetState, scaling: ScalingConfig) -> dict:
    """Species that are never stored: RM_I complexes, free M-particles, UQ complexes."""
    return {
        "RM_I": scaling.N - x[R] - x[S] - x[L],
        "M_free": scaling.M0 - (scaling.N - x[R] - x[S]),
        "UQ": scaling.U0 - x[U],
    }


def is_valid_state(x: NetState, scaling: ScalingConfig) -> bool:
    if min(x) < 0:
        return False
    return all(v >= 0 for v in derived_counts(x, scaling).values())


def validate_state(x: NetState, scaling: ScalingConfig) -> NetState:
    if len(x) != 5:
        raise ValueError(f"state must have 5 coordinates (s, r, l, q, u), got {x!r}")
    x = NetState(*(int(v) for v in x))
    if not is_valid_state(x, scaling):
        raise ValueError(
            f"state {tuple(x)} outside the state space for N={scaling.N}, "
            f"M0={scaling.M0}, U0={scaling.U0}: {derived_counts(x, scaling)}"
        )
    return x


def enumerate_states(scaling: ScalingConfig, q_max: int) -> Iterator[NetState]:
    """All valid states with q <= q_max (q is the only unbounded coordinate)."""
    N, U0 = scaling.N, scaling.U0
    for s, r, l in itertools.product(range(N + 1), repeat=3):
        if s + r + l > N:
            continue
        for q in range(q_max + 1):
            for u in range(U0 + 1):
                x = NetState(s, r, l, q, u)
                if is_valid_state(x, scaling):
                    yield x


def _q_arrival(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_0Q * sc.N


def _q_degradation(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_Q0 * x[Q]


def _uq_pairing(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_QU * x[U] * x[Q]


def _elongation_completion(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_LR * (sc.U0 - x[U]) * x[L]


def _sequestration(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_RS * x[R] * x[U]


def _desequestration(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    return p.k_SR * x[S]


def _initiation_pairing(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    s = x[S] if regulated else 0
    return p.k_RI * (sc.M0 - (sc.N - x[R] - s)) * x[R]


def _initiation_to_elongation(p: KineticParams, sc: ScalingConfig, regulated: bool, x: NetState) -> float:
    s = x[S] if regulated else 0
    return p.k_IL * (sc.N - x[R] - s - x[L])


# name, jump on (s, r, l, q, u), propensity, increments the production counter
_CHANNEL_TABLE = (
    ("q_arrival",                (0, 0, 0, 1, 0),     _q_arrival,                False),
    ("q_degradation",            (0, 0, 0, -1, 0),    _q_degradation,            False),
    ("uq_pairing",               (0, 0, 0, -1, -1),   _uq_pairing,               False),
    ("elongation_completion",    (0, 1, -1, 0, 1),    _elongation_completion,    True),
    ("sequestration",            (1, -1, 0, 0, 0),    _sequestration,            False),
    ("desequestration",          (-1, 1, 0, 0, 0),    _desequestration,          False),
    ("initiation_pairing",       (0, -1, 0, 0, 0),    _initiation_pairing,       False),
    ("initiation_to_elongation", (0, 0, 1, 0, 0),     _initiation_to_elongation, False),
)

REGULATION_CHANNELS = frozenset({"sequestration", "desequestration"})


def build_network(params: KineticParams, scaling: ScalingConfig, regulated: bool = True) -> List[ReactionChannel]:
    """Reaction channels of the network; the unregulated variant has no (de)sequestration."""
    if not isinstance(params, KineticParams):
        raise TypeError(f"params must be KineticParams, got {type(params).__name__}")
    if scaling.M0 < scaling.N:
        raise ValueError(f"M0={scaling.M0} < N={scaling.N}")
    channels = []
    for name, jump, rate, produces in _CHANNEL_TABLE:
        if not regulated and name in REGULATION_CHANNELS:
            continue
        channels.append(ReactionChannel(name, jump, partial(rate, params, scaling, regulated), produces))
    return channels


def apply_jump(x: NetState, channel: ReactionChannel) -> NetState:
    return NetState(*(a + b for a, b in zip(x, channel.jump)))


def check_channels(channels: List[ReactionChannel], x: NetState, scaling: ScalingConfig) -> None:
    """Raise InvariantViolation if an enabled channel leads outside the state space."""
    for ch in channels:
        rate = ch.propensity(x)
        if rate < 0:
            raise InvariantViolation(f"{ch.name}: negative propensity {rate} at {tuple(x)}")
        if rate > 0 and not is_valid_state(apply_jump(x, ch), scaling):
            raise InvariantViolation(
                f"{ch.name}: propensity {rate} > 0 at {tuple(x)} but the jump leaves the state space"
            )


def _valid_for(scaling: ScalingConfig, regulated: bool, x: tuple) -> bool:
    return is_valid_state(x, scaling) and (regulated or x[S] == 0)


def state_validator(scaling: ScalingConfig, regulated: bool = True) -> Callable[[tuple], bool]:
    """Predicate for the simulator's per-event conservation check."""
    return partial(_valid_for, scaling, regulated)


def default_state_cap(scaling: ScalingConfig) -> int:
    """Hard cap on the free Q count, the only unbounded coordinate."""
    return 10 ** 6 * scaling.N


def condition_value(params: KineticParams, C_M: float) -> float:
    """Left side of the sequestration condition, compared against C_U."""
    rho = params.k_0Q / params.k_IL
    return (params.k_SR / params.k_RS) * (params.k_RI / params.k_0Q) * (C_M - rho) * (1.0 - rho)


def _close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def classify_regime(
    params: KineticParams,
    C_M: float,
    C_U: float,
    regulated: bool = True,
    rtol: float = BOUNDARY_RTOL,
) -> Regime:
    if not C_M > 1:
        raise ValueError(f"C_M must be > 1, got {C_M}")
    if not C_U > 0:
        raise ValueError(f"C_U must be > 0, got {C_U}")
    if _close(params.k_0Q, params.k_IL, rtol):
        return Regime.BOUNDARY
    if params.k_0Q > params.k_IL:
        return Regime.STABLE
    if not regulated:
        return Regime.UNDER_LOADED
    phi = condition_value(params, C_M)
    if _close(phi, C_U, rtol):
        return Regime.BOUNDARY
    return Regime.OPTIMAL_SEQUESTRATION if phi < C_U else Regime.SATURATION


# Coordinates of order one in each regime, in the order of the fast laws.
FAST_COORDINATES = {
    Regime.STABLE: ("r", "l", "u"),
    Regime.UNDER_LOADED: ("r", "q", "u"),
    Regime.OPTIMAL_SEQUESTRATION: ("r", "l", "q"),
    Regime.SATURATION: ("r", "q", "u"),
}

# Coordinates of order N, scaled by 1/N, in the order of the limiting ODE state.
SLOW_COORDINATES = {
    Regime.STABLE: ("q",),
    Regime.UNDER_LOADED: ("l",),
    Regime.OPTIMAL_SEQUESTRATION: ("s", "u"),
    Regime.SATURATION: ("s", "l"),
}

# Fast coordinates observed through U0 - U instead of U.
REFLECTED_COORDINATES = {
    Regime.STABLE: (),
    Regime.UNDER_LOADED: ("u",),
    Regime.OPTIMAL_SEQUESTRATION: (),
    Regime.SATURATION: ("u",),
}


def coerce_regime(value) -> Regime:
    if isinstance(value, Regime):
        return value
    try:
        return Regime(value)
    except ValueError:
        names = ", ".join(r.value for r in Regime)
        raise ValueError(f"unknown regime {value!r}; expected one of {names}") from None


def regime_summary(params: KineticParams, C_M: float, C_U: float, regulated: bool = True) -> dict:
    return {
        "regime": classify_regime(params, C_M, C_U, regulated).value,
        "phi": condition_value(params, C_M),
        "C_U": C_U,
        "rho": params.k_0Q / params.k_IL,
        "regulated": regulated,
    }


def scaling_for(N: int, C_M: float, C_U: float, M0: Optional[int] = None, U0: Optional[int] = None) -> ScalingConfig:
    base = ScalingConfig.from_ratios(N, C_M, C_U)
    if M0 is None and U0 is None:
        return base
    return ScalingConfig(
        N=N,
        M0=base.M0 if M0 is None else int(M0),
        U0=base.U0 if U0 is None else int(U0),
        C_M=C_M,
        C_U=C_U,
    )
