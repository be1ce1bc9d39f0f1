"""Occupation measures of trajectories and distances between lattice laws."""

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .queues import DiscreteDist
from .ssa import Trajectory, sample_on_grid


Coordinate = Union[str, int]


@dataclass
class OccupationMeasure:
    """Time spent by a path in each atom of a coordinate projection over a window."""

    coordinates: Tuple[str, ...]
    window: Tuple[float, float]
    weights: Dict[Tuple[int, ...], float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.window[1] - self.window[0]

    def total_weight(self) -> float:
        return float(sum(self.weights.values()))

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        total = self.total_weight()
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([*self.coordinates, "sojourn", "probability"])
            for atom in sorted(self.weights):
                w = self.weights[atom]
                writer.writerow([*atom, repr(w), repr(w / total if total > 0 else 0.0)])


def resolve_coordinates(names: Sequence[str], selection: Iterable[Coordinate]) -> List[int]:
    out = []
    for c in selection:
        if isinstance(c, int):
            if not 0 <= c < len(names):
                raise ValueError(f"coordinate index {c} out of range for {names}")
            out.append(c)
        elif c in names:
            out.append(names.index(c))
        else:
            raise ValueError(f"unknown coordinate {c!r}; path has {names}")
    return out


def _labels(names: Sequence[str], indices: Sequence[int], reflect: Mapping[str, int]) -> Tuple[str, ...]:
    return tuple(f"{reflect[names[i]]}-{names[i]}" if names[i] in reflect else names[i] for i in indices)


def _project(states: np.ndarray, names: Sequence[str], indices: Sequence[int], reflect: Mapping[str, int]) -> np.ndarray:
    projected = states[:, indices].copy()
    for column, i in enumerate(indices):
        if names[i] in reflect:
            projected[:, column] = reflect[names[i]] - projected[:, column]
    return projected


def occupation(
    traj: Trajectory,
    coordinates: Sequence[Coordinate],
    window: Optional[Tuple[float, float]] = None,
    reflect: Optional[Mapping[str, int]] = None,
) -> OccupationMeasure:
    """Exact sojourn times of the projected path inside ``window``.

    ``reflect`` maps a coordinate name to a total T, observing T - x instead of x.
    """
    t0, t1 = (0.0, traj.horizon) if window is None else (float(window[0]), float(window[1]))
    if not 0 <= t0 <= t1 <= traj.horizon:
        raise ValueError(f"window [{t0}, {t1}] outside [0, {traj.horizon}]")
    if not traj.recorded:
        raise ValueError("trajectory has no event log; use an OccupationAccumulator while simulating")
    reflect = dict(reflect or {})
    indices = resolve_coordinates(traj.coordinates, coordinates)
    starts = np.concatenate([[0.0], traj.times])
    ends = np.concatenate([traj.times, [traj.horizon]])
    overlap = np.clip(np.minimum(ends, t1) - np.maximum(starts, t0), 0.0, None)
    states = np.vstack([np.asarray(traj.initial, dtype=np.int64)[None, :], traj.states])
    keep = overlap > 0
    om = OccupationMeasure(_labels(traj.coordinates, indices, reflect), (t0, t1))
    if not keep.any():
        return om
    projected = _project(states[keep], traj.coordinates, indices, reflect)
    atoms, inverse = np.unique(projected, axis=0, return_inverse=True)
    sums = np.bincount(inverse.reshape(-1), weights=overlap[keep])
    om.weights = {tuple(int(v) for v in atom): float(w) for atom, w in zip(atoms, sums)}
    return om


class OccupationAccumulator:
    """Simulation observer building occupation measures over several windows."""

    def __init__(
        self,
        names: Sequence[str],
        coordinates: Sequence[Coordinate],
        windows: Sequence[Tuple[float, float]],
        reflect: Optional[Mapping[str, int]] = None,
    ):
        self.names = tuple(names)
        self.indices = resolve_coordinates(self.names, coordinates)
        self.reflect = dict(reflect or {})
        self.windows = [(float(a), float(b)) for a, b in windows]
        self._weights = [defaultdict(float) for _ in self.windows]

    def _atom(self, state: tuple) -> Tuple[int, ...]:
        out = []
        for i in self.indices:
            name = self.names[i]
            out.append(self.reflect[name] - state[i] if name in self.reflect else state[i])
        return tuple(out)

    def segment(self, t0: float, t1: float, state: tuple, production: int) -> None:
        atom = None
        for k, (a, b) in enumerate(self.windows):
            dt = min(t1, b) - max(t0, a)
            if dt > 0:
                if atom is None:
                    atom = self._atom(state)
                self._weights[k][atom] += dt

    def finish(self, horizon: float, state: tuple, production: int) -> None:
        pass

    def measures(self) -> List[OccupationMeasure]:
        labels = _labels(self.names, self.indices, self.reflect)
        return [OccupationMeasure(labels, w, dict(acc)) for w, acc in zip(self.windows, self._weights)]


def merge(measures: Sequence[OccupationMeasure]) -> OccupationMeasure:
    """Atom-wise sum of measures over the same coordinates (e.g. across replicas)."""
    if not measures:
        raise ValueError("nothing to merge")
    first = measures[0]
    weights: Dict[Tuple[int, ...], float] = defaultdict(float)
    span = 0.0
    for om in measures:
        if om.coordinates != first.coordinates:
            raise ValueError(f"cannot merge {om.coordinates} into {first.coordinates}")
        span += om.total
        for atom, w in om.weights.items():
            weights[atom] += w
    return OccupationMeasure(first.coordinates, (0.0, span), dict(weights))


def normalize(om: OccupationMeasure) -> DiscreteDist:
    """Empirical law: sojourn times divided by the window length."""
    if not om.total > 0:
        raise ValueError(f"window {om.window} has zero length")
    dim = len(om.coordinates)
    if not om.weights:
        raise ValueError("occupation measure has no atoms")
    shape = tuple(max(atom[i] for atom in om.weights) + 1 for i in range(dim))
    if min(min(atom) for atom in om.weights) < 0:
        raise ValueError("occupation atoms must be nonnegative")
    table = np.zeros(shape)
    for atom, w in om.weights.items():
        table[atom] += w / om.total
    return DiscreteDist(table, tail_mass=0.0, coordinates=om.coordinates, label="occupation")


class TVResult(NamedTuple):
    distance: float
    tail_mass: float


def tv_distance(p: DiscreteDist, q: DiscreteDist) -> TVResult:
    """Half the L1 distance on the union of both boxes, with both tails reported."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    shape = tuple(max(a, b) for a, b in zip(p.shape, q.shape))
    distance = 0.5 * float(np.abs(p.padded(shape) - q.padded(shape)).sum())
    return TVResult(min(1.0, max(0.0, distance)), p.tail_mass + q.tail_mass)


def scaled_path(traj: Trajectory, coordinates: Sequence[Coordinate], grid: Sequence[float], N: int) -> np.ndarray:
    """Selected coordinates divided by N at the grid times, one row per time."""
    if N <= 0:
        raise ValueError(f"N must be positive, got {N}")
    indices = resolve_coordinates(traj.coordinates, coordinates)
    samples = sample_on_grid(traj, grid)
    if not samples:
        return np.zeros((0, len(indices)))
    states = np.array([s for s, _ in samples], dtype=float)
    return states[:, indices] / N
