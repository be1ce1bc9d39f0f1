"""Exact stochastic simulation (Gillespie direct method) of a reaction network."""

import bisect
import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import save_json
from .model import InvariantViolation, ReactionChannel


logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

# Random variates are drawn from the generator in blocks of this size.
DRAW_BLOCK = 4096


class StateCapExceeded(RuntimeError):
    """A coordinate grew past the configured hard cap."""


class PropensityOverflowError(OverflowError):
    """The total propensity is not a finite number."""


@dataclass
class Trajectory:
    """Event-resolved path of a jump process and its production counter.

    ``times[k]``, ``channels[k]`` and ``states[k]`` describe the k-th event;
    ``production[k]`` is the production count right after it.
    """

    initial: Tuple[int, ...]
    horizon: float
    seed: Dict[str, object]
    coordinates: Tuple[str, ...]
    channel_names: Tuple[str, ...]
    times: np.ndarray
    channels: np.ndarray
    states: np.ndarray
    production: np.ndarray
    final: Tuple[int, ...]
    final_production: int
    event_count: int
    recorded: bool = True
    metadata: Dict[str, object] = field(default_factory=dict)

    def state_at(self, t: float) -> Tuple[Tuple[int, ...], int]:
        return sample_on_grid(self, [t])[0]

    def production_at(self, t: float) -> int:
        return self.state_at(t)[1]


def seed_sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer or SeedSequence, got {seed!r}")
    return np.random.SeedSequence(int(seed))


def describe_seed(ss: np.random.SeedSequence) -> Dict[str, object]:
    return {"entropy": int(ss.entropy), "spawn_key": [int(k) for k in ss.spawn_key]}


def replica_seeds(base_seed: Seed, count: int) -> List[np.random.SeedSequence]:
    """Replica i is driven by child i of SeedSequence(base_seed), spawn key (i,)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return seed_sequence(base_seed).spawn(count)


class _Draws:
    """Blocked exponential and uniform variates from one generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._exp = iter(())
        self._unif = iter(())

    def exponential(self) -> float:
        try:
            return next(self._exp)
        except StopIteration:
            self._exp = iter(self.rng.standard_exponential(DRAW_BLOCK).tolist())
            return next(self._exp)

    def uniform(self) -> float:
        try:
            return next(self._unif)
        except StopIteration:
            self._unif = iter(self.rng.random(DRAW_BLOCK).tolist())
            return next(self._unif)


def _pick(cumulative: List[float], rates: List[float], target: float) -> int:
    k = bisect.bisect_right(cumulative, target)
    if k >= len(cumulative):
        k = len(cumulative) - 1
    # Rounding can land on a zero-rate channel at the top of the table.
    while rates[k] <= 0:
        k -= 1
    return k


def simulate(
    channels: Sequence[ReactionChannel],
    initial: Sequence[int],
    horizon: float,
    seed: Seed,
    *,
    cap: Optional[int] = None,
    record_events: bool = True,
    observers: Sequence[object] = (),
    validate: Optional[Callable[[tuple], bool]] = None,
    metadata: Optional[dict] = None,
    coordinates: Optional[Sequence[str]] = None,
) -> Trajectory:
    """Sample a path of the jump process on [0, horizon].

    Observers receive ``segment(t0, t1, state, production)`` for every sojourn
    interval and ``finish(horizon, state, production)`` once at the end, so long
    runs can be summarized without keeping the event log.
    ``validate`` is called on every post-jump state; a False return raises
    InvariantViolation.
    """
    if not horizon >= 0 or not math.isfinite(horizon):
        raise ValueError(f"horizon must be a finite number >= 0, got {horizon}")
    if not channels:
        raise ValueError("at least one reaction channel is required")
    dim = len(initial)
    for ch in channels:
        if len(ch.jump) != dim:
            raise ValueError(f"channel {ch.name} has a jump of dimension {len(ch.jump)}, state has {dim}")
    state = tuple(int(v) for v in initial)
    if validate is not None and not validate(state):
        raise ValueError(f"initial state {state} is not valid")
    if cap is not None and max(state) > cap:
        raise StateCapExceeded(f"initial state {state} exceeds cap {cap}")

    ss = seed_sequence(seed)
    draws = _Draws(np.random.default_rng(ss))
    if coordinates is None:
        coordinates = getattr(initial, "_fields", None) or [f"x{i}" for i in range(dim)]
    coordinates = tuple(coordinates)
    if len(coordinates) != dim:
        raise ValueError(f"{len(coordinates)} coordinate names for a state of dimension {dim}")
    init_state = state

    times: List[float] = []
    fired: List[int] = []
    states: List[tuple] = []
    produced: List[int] = []
    jumps = [ch.jump for ch in channels]
    props = [ch.propensity for ch in channels]
    producing = [ch.produces for ch in channels]

    t = 0.0
    production = 0
    events = 0
    while True:
        rates = [f(state) for f in props]
        cumulative = list(itertools.accumulate(rates))
        total = cumulative[-1]
        if not math.isfinite(total):
            raise PropensityOverflowError(f"total propensity {total} at t={t} in state {state}")
        if total <= 0:
            break
        t_next = t + draws.exponential() / total
        if t_next > horizon:
            break
        k = _pick(cumulative, rates, draws.uniform() * total)
        for obs in observers:
            obs.segment(t, t_next, state, production)
        state = tuple(a + b for a, b in zip(state, jumps[k]))
        if producing[k]:
            production += 1
        if validate is not None and not validate(state):
            raise InvariantViolation(f"{channels[k].name} at t={t_next} led to invalid state {state}")
        if cap is not None and max(state) > cap:
            raise StateCapExceeded(f"{channels[k].name} at t={t_next}: state {state} exceeds cap {cap}")
        t = t_next
        events += 1
        if record_events:
            times.append(t)
            fired.append(k)
            states.append(state)
            produced.append(production)
    for obs in observers:
        if horizon > t:
            obs.segment(t, horizon, state, production)
        obs.finish(horizon, state, production)

    logger.debug("simulated %d events up to t=%g (seed %s)", events, horizon, ss.spawn_key)
    return Trajectory(
        initial=init_state,
        horizon=float(horizon),
        seed=describe_seed(ss),
        coordinates=coordinates,
        channel_names=tuple(ch.name for ch in channels),
        times=np.asarray(times, dtype=float),
        channels=np.asarray(fired, dtype=np.int64),
        states=np.asarray(states, dtype=np.int64).reshape(len(states), dim),
        production=np.asarray(produced, dtype=np.int64),
        final=state,
        final_production=production,
        event_count=events,
        recorded=record_events,
        metadata={**(metadata or {}), "cap": cap},
    )


def sample_on_grid(traj: Trajectory, grid: Sequence[float]) -> List[Tuple[Tuple[int, ...], int]]:
    """Right-continuous evaluation of the path at grid times."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return []
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid times must be nondecreasing")
    if grid[0] < 0 or grid[-1] > traj.horizon:
        raise ValueError(f"grid times must lie in [0, {traj.horizon}], got [{grid[0]}, {grid[-1]}]")
    if not traj.recorded:
        raise ValueError("trajectory was simulated without an event log; use a GridRecorder")
    idx = np.searchsorted(traj.times, grid, side="right") - 1
    out = []
    for i in idx.tolist():
        if i < 0:
            out.append((traj.initial, 0))
        else:
            out.append((tuple(int(v) for v in traj.states[i]), int(traj.production[i])))
    return out


class GridRecorder:
    """Observer that samples the path on a fixed grid while it is simulated."""

    def __init__(self, grid: Sequence[float]):
        self.grid = [float(g) for g in grid]
        if any(b < a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid times must be nondecreasing")
        self.samples: List[Tuple[Tuple[int, ...], int]] = []
        self._next = 0

    def segment(self, t0: float, t1: float, state: tuple, production: int) -> None:
        # Segments are half-open [t0, t1); finish() picks up a grid point at the horizon.
        while self._next < len(self.grid) and self.grid[self._next] < t1:
            self.samples.append((state, production))
            self._next += 1

    def finish(self, horizon: float, state: tuple, production: int) -> None:
        while self._next < len(self.grid) and self.grid[self._next] <= horizon:
            self.samples.append((state, production))
            self._next += 1


def _simulate_one(args):
    channels, initial, horizon, seed, kwargs = args
    return simulate(channels, initial, horizon, seed, **kwargs)


def run_replicas(
    channels: Sequence[ReactionChannel],
    initial: Sequence[int],
    horizon: float,
    base_seed: Seed,
    count: int,
    *,
    workers: int = 1,
    **kwargs,
) -> List[Trajectory]:
    """Independent replicas, replica i seeded with child i of the base seed.

    Output order follows the replica index whatever the worker count.
    """
    seeds = replica_seeds(base_seed, count)
    jobs = [(channels, initial, horizon, ss, kwargs) for ss in seeds]
    if workers <= 1 or count == 1:
        return [_simulate_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_one, jobs))


def sample_channel_counts(
    channels: Sequence[ReactionChannel], state: Sequence[int], n: int, seed: Seed
) -> np.ndarray:
    """Channel counts of n jump-chain steps taken from a frozen state."""
    rates = np.array([ch.propensity(state) for ch in channels], dtype=float)
    total = rates.sum()
    if not total > 0:
        raise ValueError(f"no channel is enabled in state {tuple(state)}")
    rng = np.random.default_rng(seed_sequence(seed))
    return rng.multinomial(n, rates / total)


def write_csv(traj: Trajectory, path, grid: Optional[Sequence[float]] = None) -> None:
    """Rows (time, coordinates..., P) at grid times, or at event times if grid is None."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if grid is None:
        rows = [(0.0, traj.initial, 0)]
        rows += [
            (float(t), tuple(int(v) for v in s), int(p))
            for t, s, p in zip(traj.times, traj.states, traj.production)
        ]
    else:
        rows = [(float(t), s, p) for t, (s, p) in zip(grid, sample_on_grid(traj, grid))]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["time", *traj.coordinates, "P"])
        for t, s, p in rows:
            writer.writerow([repr(t), *s, p])


def write_metadata(traj: Trajectory, path) -> None:
    save_json(
        {
            "seed": traj.seed,
            "horizon": traj.horizon,
            "initial": list(traj.initial),
            "coordinates": list(traj.coordinates),
            "channels": list(traj.channel_names),
            "event_count": traj.event_count,
            "final": list(traj.final),
            "final_production": traj.final_production,
            **traj.metadata,
        },
        path,
    )
