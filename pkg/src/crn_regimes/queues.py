"""M/M/infinity building blocks and invariant laws of the fast processes."""

import csv
import itertools
import math
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, stats
from scipy.sparse.linalg import spsolve

from .model import AdmissibleRegionError, KineticParams, ReactionChannel, Regime, FAST_COORDINATES
from .ssa import Seed, Trajectory, seed_sequence, simulate


def truncation_radius(mean: float) -> int:
    """Largest support point kept for a Poisson factor."""
    return int(math.ceil(mean + 12.0 * math.sqrt(mean) + 30.0))


class DiscreteDist:
    """A probability mass function on a box of N^k.

    ``table[x]`` is the mass of x; ``tail_mass`` bounds the mass outside the box.
    """

    def __init__(
        self,
        table,
        *,
        tail_mass: Optional[float] = None,
        mean: Optional[Sequence[float]] = None,
        sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
        coordinates: Optional[Sequence[str]] = None,
        label: str = "",
    ):
        table = np.asarray(table, dtype=float)
        if table.ndim == 0:
            raise ValueError("a distribution needs at least one coordinate")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ValueError("pmf values must be finite and nonnegative")
        self.table = table
        self.dim = table.ndim
        self.tail_mass = max(0.0, 1.0 - float(table.sum())) if tail_mass is None else float(tail_mass)
        self._mean = None if mean is None else np.asarray(mean, dtype=float)
        self._sampler = sampler
        self.coordinates = tuple(coordinates) if coordinates else tuple(f"x{i}" for i in range(self.dim))
        self.label = label

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.table.shape

    def mass(self) -> float:
        return float(self.table.sum())

    def pmf(self, x: Sequence[int]) -> float:
        x = tuple(int(v) for v in x)
        if len(x) != self.dim:
            raise ValueError(f"point {x} has dimension {len(x)}, distribution has {self.dim}")
        if any(v < 0 or v >= n for v, n in zip(x, self.shape)):
            return 0.0
        return float(self.table[x])

    def mean(self) -> np.ndarray:
        """Closed-form mean when known, else the mean of the tabulated mass."""
        if self._mean is not None:
            return self._mean.copy()
        return np.array([self._axis_moment(i) for i in range(self.dim)])

    def _axis_moment(self, axis: int) -> float:
        marginal = self.marginal_table(axis)
        return float(np.arange(marginal.size) @ marginal)

    def marginal_table(self, axis: int) -> np.ndarray:
        other = tuple(i for i in range(self.dim) if i != axis)
        return self.table.sum(axis=other) if other else self.table

    def marginal(self, axis: int) -> "DiscreteDist":
        mean = None if self._mean is None else [self._mean[axis]]
        return DiscreteDist(
            self.marginal_table(axis),
            tail_mass=self.tail_mass,
            mean=mean,
            coordinates=[self.coordinates[axis]],
            label=f"{self.label}[{self.coordinates[axis]}]",
        )

    def cov(self) -> np.ndarray:
        points = np.indices(self.shape).reshape(self.dim, -1).astype(float)
        weights = self.table.reshape(-1) / self.mass()
        centered = points - (points @ weights)[:, None]
        return (centered * weights) @ centered.T

    def sample(self, n: int, seed: Seed) -> np.ndarray:
        """n draws as an (n, dim) integer array."""
        rng = np.random.default_rng(seed_sequence(seed))
        if self._sampler is not None:
            return self._sampler(rng, n)
        flat = self.table.reshape(-1) / self.mass()
        picks = rng.choice(flat.size, size=n, p=flat)
        return np.stack(np.unravel_index(picks, self.shape), axis=1).astype(np.int64)

    def atoms(self) -> Iterator[Tuple[Tuple[int, ...], float]]:
        for idx in np.argwhere(self.table > 0):
            point = tuple(int(v) for v in idx)
            yield point, float(self.table[point])

    def padded(self, shape: Sequence[int]) -> np.ndarray:
        """Table zero-extended to a larger box."""
        out = np.zeros(tuple(shape), dtype=float)
        out[tuple(slice(0, n) for n in self.shape)] = self.table
        return out

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([*self.coordinates, "probability"])
            for point, p in self.atoms():
                writer.writerow([*point, repr(p)])

    def __repr__(self) -> str:
        return f"DiscreteDist({self.label or 'table'}, shape={self.shape}, tail={self.tail_mass:.2e})"


def poisson_pmf(mean: float) -> np.ndarray:
    if mean < 0 or not math.isfinite(mean):
        raise ValueError(f"Poisson mean must be finite and >= 0, got {mean}")
    if mean == 0:
        return np.array([1.0])
    return stats.poisson.pmf(np.arange(truncation_radius(mean) + 1), mean)


def _poisson_sampler(means: Tuple[float, ...], rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.poisson(means, size=(n, len(means))).astype(np.int64)


def poisson_product(means: Sequence[float], coordinates: Optional[Sequence[str]] = None, label: str = "") -> DiscreteDist:
    """Independent Poisson coordinates with the given means."""
    means = tuple(float(m) for m in means)
    factors = [poisson_pmf(m) for m in means]
    table = factors[0]
    for factor in factors[1:]:
        table = np.multiply.outer(table, factor)
    tail = sum(float(stats.poisson.sf(f.size - 1, m)) for f, m in zip(factors, means) if m > 0)
    return DiscreteDist(
        table,
        tail_mass=tail,
        mean=means,
        sampler=partial(_poisson_sampler, means),
        coordinates=coordinates,
        label=label or "poisson_product",
    )


def mm_inf_invariant(lam: float, mu: float) -> DiscreteDist:
    if not mu > 0:
        raise ValueError(f"service rate mu must be > 0, got {mu}")
    if lam < 0:
        raise ValueError(f"arrival rate lambda must be >= 0, got {lam}")
    return poisson_product([lam / mu], coordinates=["x"], label=f"Pois({lam / mu:g})")


def _fastinv_sampler(means: Tuple[float, float, float, float], rng: np.random.Generator, n: int) -> np.ndarray:
    x, y1, y2, z = (rng.poisson(m, size=n) for m in means)
    return np.stack([x + y1, z, x + y2], axis=1).astype(np.int64)


def _shared_sum_law(a: float, b: float, c: float, d: float, mean, label: str) -> DiscreteDist:
    """Law of (X+Y1, Z, X+Y2) for independent Poisson X, Y1, Y2, Z of means a, b, c, d."""
    px, py1, py2, pz = (poisson_pmf(m) for m in (a, b, c, d))
    block = np.multiply.outer(py1, py2)
    shared = np.zeros((px.size + py1.size - 1, px.size + py2.size - 1))
    for x, weight in enumerate(px):
        shared[x:x + py1.size, x:x + py2.size] += weight * block
    table = shared[:, None, :] * pz[None, :, None]
    return DiscreteDist(
        table,
        mean=mean,
        sampler=partial(_fastinv_sampler, (a, b, c, d)),
        coordinates=("r", "l", "u"),
        label=label,
    )


def fastinv_dist(lam: float, mu_R: float, mu_L: float, mu_U: float) -> DiscreteDist:
    """Invariant law of the FastInv network on (R, L, U); R and U share a component."""
    for name, rate in (("lambda", lam), ("mu_R", mu_R), ("mu_L", mu_L), ("mu_U", mu_U)):
        if not rate > 0:
            raise ValueError(f"{name} must be > 0, got {rate}")
    return _shared_sum_law(
        lam / (mu_R + mu_U),
        lam * mu_U / (mu_R * (mu_R + mu_U)),
        lam * mu_R / (mu_U * (mu_R + mu_U)),
        lam / mu_L,
        mean=(lam / mu_R, lam / mu_L, lam / mu_U),
        label="fastinv",
    )


def _constant(rate: float, x: tuple) -> float:
    return rate


def _linear(rate: float, index: int, x: tuple) -> float:
    return rate * x[index]


def _unit(dim: int, *pairs: Tuple[int, int]) -> Tuple[int, ...]:
    jump = [0] * dim
    for index, step in pairs:
        jump[index] += step
    return tuple(jump)


def _check_rates(**rates: float) -> None:
    for name, rate in rates.items():
        if not rate > 0:
            raise ValueError(f"{name} must be > 0, got {rate}")


def mm_inf_channels(lam: float, mu: float) -> List[ReactionChannel]:
    if not mu > 0:
        raise ValueError(f"service rate mu must be > 0, got {mu}")
    if lam < 0:
        raise ValueError(f"arrival rate lambda must be >= 0, got {lam}")
    return [
        ReactionChannel("arrival", (1,), partial(_constant, lam)),
        ReactionChannel("departure", (-1,), partial(_linear, mu, 0)),
    ]


def mm_inf_simulate(lam: float, mu: float, x0: int, horizon: float, seed: Seed, **kwargs) -> Trajectory:
    """Birth-death path with birth rate lambda and death rate mu*x."""
    if x0 < 0:
        raise ValueError(f"initial count must be >= 0, got {x0}")
    return simulate(mm_inf_channels(lam, mu), (int(x0),), horizon, seed, coordinates=("x",), **kwargs)


def mm_inf_fluid_limit(lam: float, mu: float, l0: float, t):
    """Scaled queue length rho + (l0 - rho) exp(-mu t) with rho = lam/mu."""
    rho = lam / mu
    return rho + (l0 - rho) * np.exp(-mu * np.asarray(t, dtype=float))


def fastinv_ctmc_channels(lam: float, mu_R: float, mu_L: float, mu_U: float) -> List[ReactionChannel]:
    """Channels on (x_R, x_L, x_U) whose invariant law is fastinv_dist."""
    _check_rates(lam=lam, mu_R=mu_R, mu_L=mu_L, mu_U=mu_U)
    return [
        ReactionChannel("arrival", _unit(3, (1, 1)), partial(_constant, lam)),
        ReactionChannel("completion", _unit(3, (0, 1), (2, 1), (1, -1)), partial(_linear, mu_L, 1)),
        ReactionChannel("r_departure", _unit(3, (0, -1)), partial(_linear, mu_R, 0)),
        ReactionChannel("u_departure", _unit(3, (2, -1)), partial(_linear, mu_U, 2)),
    ]


def cascade_channels(alpha: float, beta: float, eta: float, params: KineticParams) -> List[ReactionChannel]:
    """Two-node cascade: node 1 feeds node 2, which also gets extra input from node 1."""
    if not 0 < alpha <= beta:
        raise ValueError(f"need 0 < alpha <= beta, got alpha={alpha}, beta={beta}")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    channels = [
        ReactionChannel("arrival", (1, 0), partial(_constant, params.k_IL)),
        ReactionChannel("transfer", (-1, 1), partial(_linear, params.k_LR * alpha, 0)),
    ]
    if beta > alpha:
        channels.append(ReactionChannel("extra", (0, 1), partial(_linear, params.k_LR * (beta - alpha), 0)))
    channels.append(ReactionChannel("departure", (0, -1), partial(_linear, params.k_QU * eta, 1)))
    return channels


def cascade_invariant(alpha: float, beta: float, eta: float, params: KineticParams) -> DiscreteDist:
    """Product of Poissons with the flow-balance means of the cascade.

    Exact only when alpha == beta. For alpha < beta this is an approximation:
    the first marginal and both means are exact, but the joint law is not a
    product. Use ``generator_stationary(cascade_channels(...), caps)`` when the
    exact stationary law is needed.
    """
    if not 0 < alpha <= beta:
        raise ValueError(f"need 0 < alpha <= beta, got alpha={alpha}, beta={beta}")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    first = params.k_IL / (alpha * params.k_LR)
    second = beta * params.k_IL / (alpha * eta * params.k_QU)
    return poisson_product([first, second], coordinates=("x1", "x2"), label="cascade")


def _slow(regime: Regime, slow: Sequence[float], size: int) -> Tuple[float, ...]:
    slow = tuple(float(v) for v in np.atleast_1d(slow))
    if len(slow) != size:
        raise AdmissibleRegionError(f"{regime.value} takes {size} slow variable(s), got {len(slow)}")
    return slow


def stable_rates(params: KineticParams, C_M: float, C_U: float, q: float) -> Dict[str, float]:
    """FastInv identification of the stable regime's fast network at slow level q."""
    if not q > 0:
        raise AdmissibleRegionError(f"stable fast law needs q > 0, got {q}")
    return {
        "lam": params.k_IL,
        "mu_R": params.k_RI * (C_M - 1.0),
        "mu_L": params.k_LR * C_U,
        "mu_U": params.k_QU * q,
    }


def regime_fast_means(regime: Regime, params: KineticParams, C_M: float, C_U: float, slow) -> Tuple[float, ...]:
    """Poisson means of the product-form regimes, in FAST_COORDINATES order."""
    p = params
    if regime is Regime.UNDER_LOADED:
        (l,) = _slow(regime, slow, 1)
        if not 0 < l <= 1:
            raise AdmissibleRegionError(f"under-loaded fast law needs 0 < l <= 1, got {l}")
        return (p.k_0Q / (p.k_RI * (C_M - 1.0)), p.k_0Q / (p.k_QU * C_U), p.k_0Q / (p.k_LR * l))
    if regime is Regime.OPTIMAL_SEQUESTRATION:
        s, u = _slow(regime, slow, 2)
        if not (0 <= s < 1 and 0 < u < C_U):
            raise AdmissibleRegionError(f"sequestration fast law needs 0 <= s < 1 and 0 < u < C_U, got s={s}, u={u}")
        inflow = p.k_IL * (1.0 - s)
        return (
            (inflow + p.k_SR * s) / (p.k_RI * (C_M - 1.0 + s) + p.k_RS * u),
            inflow / (p.k_LR * (C_U - u)),
            p.k_0Q / (p.k_QU * u),
        )
    if regime is Regime.SATURATION:
        s, l = _slow(regime, slow, 2)
        if not (s >= 0 and l > 0 and s + l <= 1):
            raise AdmissibleRegionError(f"saturation fast law needs s >= 0, l > 0, s + l <= 1, got s={s}, l={l}")
        return (
            (p.k_0Q + p.k_SR * s) / (p.k_RI * (C_M - 1.0 + s) + p.k_RS * C_U),
            p.k_0Q / (p.k_QU * C_U),
            p.k_0Q / (p.k_LR * l),
        )
    raise AdmissibleRegionError(f"{regime.value} has no product-form fast law")


def stable_law(params: KineticParams, C_M: float, C_U: float, q: float) -> DiscreteDist:
    """Stable-regime fast law on (R, L, U) written with its own four Poisson means.

    C = k_RI(C_M-1) + k_QU q; R = a+v and U = a+w share the component a.
    """
    if not q > 0:
        raise AdmissibleRegionError(f"stable fast law needs q > 0, got {q}")
    p = params
    free_m = p.k_RI * (C_M - 1.0)
    capture = p.k_QU * q
    c_kappa = free_m + capture
    return _shared_sum_law(
        p.k_IL / c_kappa,
        p.k_IL * capture / (free_m * c_kappa),
        p.k_IL * free_m / (capture * c_kappa),
        p.k_IL / (p.k_LR * C_U),
        mean=(p.k_IL / free_m, p.k_IL / (p.k_LR * C_U), p.k_IL / capture),
        label="stable",
    )


def regime_fast_dist(regime: Regime, params: KineticParams, C_M: float, C_U: float, slow) -> DiscreteDist:
    """Invariant law of the fast coordinates with the slow variables frozen."""
    coordinates = _fast_labels(regime)
    if regime is Regime.STABLE:
        (q,) = _slow(regime, slow, 1)
        return stable_law(params, C_M, C_U, q)
    means = regime_fast_means(regime, params, C_M, C_U, slow)
    return poisson_product(means, coordinates=coordinates, label=regime.value)


def _fast_labels(regime: Regime) -> Tuple[str, ...]:
    if regime not in FAST_COORDINATES:
        raise AdmissibleRegionError(f"no fast law in the {regime.value} case")
    return tuple("U0-u" if c == "u" and regime in (Regime.UNDER_LOADED, Regime.SATURATION) else c
                 for c in FAST_COORDINATES[regime])


def regime_fast_channels(regime: Regime, params: KineticParams, C_M: float, C_U: float, slow) -> List[ReactionChannel]:
    """The fast network of a regime with its slow variables frozen, in fast time."""
    p = params
    _fast_labels(regime)
    if regime is Regime.STABLE:
        (q,) = _slow(regime, slow, 1)
        return fastinv_ctmc_channels(**stable_rates(params, C_M, C_U, q))
    regime_fast_means(regime, params, C_M, C_U, slow)
    if regime is Regime.OPTIMAL_SEQUESTRATION:
        # coordinates (r, l, q)
        s, u = _slow(regime, slow, 2)
        return [
            ReactionChannel("initiation", _unit(3, (1, 1)), partial(_constant, p.k_IL * (1.0 - s))),
            ReactionChannel("completion", _unit(3, (0, 1), (1, -1)), partial(_linear, p.k_LR * (C_U - u), 1)),
            ReactionChannel("release", _unit(3, (0, 1)), partial(_constant, p.k_SR * s)),
            ReactionChannel("r_departure", _unit(3, (0, -1)),
                            partial(_linear, p.k_RS * u + p.k_RI * (C_M - 1.0 + s), 0)),
            ReactionChannel("q_arrival", _unit(3, (2, 1)), partial(_constant, p.k_0Q)),
            ReactionChannel("q_departure", _unit(3, (2, -1)), partial(_linear, p.k_QU * u, 2)),
        ]
    # Under-loaded and saturation: tandem q -> (U0-u) -> r on coordinates (r, q, v).
    if regime is Regime.UNDER_LOADED:
        (l,) = _slow(regime, slow, 1)
        s, r_exit, q_exit = 0.0, p.k_RI * (C_M - 1.0), p.k_QU * C_U
    else:
        s, l = _slow(regime, slow, 2)
        r_exit, q_exit = p.k_RI * (C_M - 1.0 + s) + p.k_RS * C_U, p.k_QU * C_U
    channels = [
        ReactionChannel("q_arrival", _unit(3, (1, 1)), partial(_constant, p.k_0Q)),
        ReactionChannel("pairing", _unit(3, (1, -1), (2, 1)), partial(_linear, q_exit, 1)),
        ReactionChannel("completion", _unit(3, (2, -1), (0, 1)), partial(_linear, p.k_LR * l, 2)),
        ReactionChannel("r_departure", _unit(3, (0, -1)), partial(_linear, r_exit, 0)),
    ]
    if s > 0:
        channels.append(ReactionChannel("release", _unit(3, (0, 1)), partial(_constant, p.k_SR * s)))
    return channels


class StationarySolution(NamedTuple):
    dist: DiscreteDist
    escape_rate: float


def generator_stationary(channels: Sequence[ReactionChannel], caps: Sequence[int]) -> StationarySolution:
    """Solve pi Q = 0 on the box prod [0, cap_i], dropping transitions that leave it.

    ``escape_rate`` is the stationary rate of the dropped transitions.
    """
    caps = tuple(int(c) for c in caps)
    shape = tuple(c + 1 for c in caps)
    size = int(np.prod(shape))
    rows, cols, vals = [], [], []
    outflow = np.zeros(size)
    escape = np.zeros(size)
    for state in itertools.product(*(range(n) for n in shape)):
        i = int(np.ravel_multi_index(state, shape))
        for ch in channels:
            rate = ch.propensity(state)
            if rate <= 0:
                continue
            target = tuple(a + b for a, b in zip(state, ch.jump))
            if any(v < 0 for v in target):
                raise ValueError(f"{ch.name} has rate {rate} at {state} but leads to {target}")
            if any(v > c for v, c in zip(target, caps)):
                escape[i] += rate
                continue
            rows.append(i)
            cols.append(int(np.ravel_multi_index(target, shape)))
            vals.append(rate)
            outflow[i] += rate
    rows.extend(range(size))
    cols.extend(range(size))
    vals.extend((-outflow).tolist())
    generator = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
    # Replace one balance equation by the normalization.
    system = generator.T.tolil()
    system[size - 1, :] = np.ones(size)
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    pi = spsolve(system.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    dist = DiscreteDist(pi.reshape(shape), tail_mass=0.0, label="generator_solve")
    return StationarySolution(dist, float(pi @ escape))
