import csv
import json
import math

import numpy as np
import pytest

from crn_regimes.model import NetState, ReactionChannel, ScalingConfig, build_network, is_valid_state, state_validator
from crn_regimes.queues import mm_inf_channels, mm_inf_simulate
from crn_regimes.ssa import (
    GridRecorder,
    PropensityOverflowError,
    StateCapExceeded,
    replica_seeds,
    run_replicas,
    sample_channel_counts,
    sample_on_grid,
    simulate,
    write_csv,
    write_metadata,
)


def _infinite(x):
    return math.inf


def test_zero_horizon_has_no_events(unit_params):
    scaling = ScalingConfig.from_ratios(10, 2.0, 1.0)
    traj = simulate(build_network(unit_params, scaling), NetState(0, 0, 0, 5, 0), 0.0, seed=1)
    assert traj.event_count == 0
    assert traj.final_production == 0
    assert traj.times.size == 0
    assert traj.final == (0, 0, 0, 5, 0)


def test_first_event_is_arrival_when_it_is_the_only_channel(unit_params):
    scaling = ScalingConfig.from_ratios(10, 2.0, 1.0)
    channels = build_network(unit_params, scaling)
    initial = NetState(0, 0, scaling.N, 0, scaling.U0)
    for seed in range(20):
        traj = simulate(channels, initial, 1.0, seed)
        assert traj.channel_names[traj.channels[0]] == "q_arrival"


def test_arrival_count_mean(unit_params):
    scaling = ScalingConfig.from_ratios(10, 2.0, 1.0)
    channels = build_network(unit_params, scaling)
    arrival = [ch.name for ch in channels].index("q_arrival")
    counts = []
    for ss in replica_seeds(7, 2000):
        traj = simulate(channels, NetState(0, 2, 2, 3, 5), 1.0, ss)
        counts.append(int(np.sum(traj.channels == arrival)))
    se = math.sqrt(10.0 / len(counts))
    assert abs(np.mean(counts) - 10.0) < 3 * se


def test_conservation_on_every_event(unit_params):
    scaling = ScalingConfig.from_ratios(20, 2.0, 1.0)
    traj = simulate(
        build_network(unit_params, scaling),
        NetState(3, 4, 5, 6, 7),
        5.0,
        seed=3,
        validate=state_validator(scaling),
    )
    assert traj.event_count > 0
    assert all(is_valid_state(tuple(s), scaling) for s in traj.states)
    assert np.all(np.diff(traj.times) > 0)
    assert np.all(np.diff(traj.production) >= 0)


def test_invalid_initial_state_rejected(unit_params):
    scaling = ScalingConfig.from_ratios(5, 2.0, 1.0)
    with pytest.raises(ValueError, match="not valid"):
        simulate(build_network(unit_params, scaling), (6, 0, 0, 0, 0), 1.0, 0, validate=state_validator(scaling))


def test_state_cap():
    with pytest.raises(StateCapExceeded, match="cap 5"):
        mm_inf_simulate(100.0, 1.0, 0, 10.0, seed=0, cap=5)


def test_infinite_propensity():
    channels = [ReactionChannel("boom", (1,), _infinite)]
    with pytest.raises(PropensityOverflowError):
        simulate(channels, (0,), 1.0, 0)


def test_bad_seed():
    with pytest.raises(ValueError, match="seed"):
        mm_inf_simulate(1.0, 1.0, 0, 1.0, seed=-1)


def test_grid_on_empty_path():
    traj = mm_inf_simulate(0.0, 1.0, 0, 4.0, seed=0)
    assert traj.event_count == 0
    assert sample_on_grid(traj, [0.0, 2.0, 4.0]) == [((0,), 0)] * 3


def test_grid_is_right_continuous():
    traj = mm_inf_simulate(0.0, 1.0, 1, 100.0, seed=11)
    assert traj.event_count == 1
    t = float(traj.times[0])
    assert sample_on_grid(traj, [t]) == [((0,), 0)]
    assert sample_on_grid(traj, [np.nextafter(t, 0.0)]) == [((1,), 0)]
    assert traj.state_at(t) == ((0,), 0)


def test_grid_outside_horizon():
    traj = mm_inf_simulate(1.0, 1.0, 0, 2.0, seed=0)
    with pytest.raises(ValueError, match="lie in"):
        sample_on_grid(traj, [0.0, 3.0])


def test_grid_recorder_matches_event_log(unit_params):
    scaling = ScalingConfig.from_ratios(15, 2.0, 1.0)
    grid = np.linspace(0.0, 3.0, 31)
    recorder = GridRecorder(grid)
    traj = simulate(build_network(unit_params, scaling), NetState(0, 5, 5, 2, 4), 3.0, 5, observers=[recorder])
    assert recorder.samples == sample_on_grid(traj, grid)


def test_replicas_are_deterministic():
    channels = mm_inf_channels(2.0, 1.0)
    first = run_replicas(channels, (0,), 5.0, 42, 3)
    second = run_replicas(channels, (0,), 5.0, 42, 3)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.states, b.states)
        assert a.seed == b.seed


def test_replicas_use_distinct_children():
    trajs = run_replicas(mm_inf_channels(2.0, 1.0), (0,), 5.0, 42, 2)
    assert trajs[0].seed["spawn_key"] == [0]
    assert trajs[1].seed["spawn_key"] == [1]
    assert trajs[0].seed != trajs[1].seed


def test_single_replica_matches_direct_call():
    channels = mm_inf_channels(2.0, 1.0)
    (replica,) = run_replicas(channels, (0,), 5.0, 9, 1)
    direct = simulate(channels, (0,), 5.0, replica_seeds(9, 1)[0])
    np.testing.assert_array_equal(replica.times, direct.times)


def test_parallel_replicas_match_serial():
    channels = mm_inf_channels(3.0, 1.0)
    serial = run_replicas(channels, (1,), 4.0, 5, 4)
    parallel = run_replicas(channels, (1,), 4.0, 5, 4, workers=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.times, b.times)


def test_extinction_time_mean():
    times = []
    for ss in replica_seeds(123, 4000):
        traj = mm_inf_simulate(0.0, 1.0, 2, 100.0, ss)
        times.append(traj.times[-1])
    se = math.sqrt(1.25 / len(times))
    assert abs(np.mean(times) - 1.5) < 4 * se


def test_channel_counts_from_frozen_state(unit_params):
    scaling = ScalingConfig.from_ratios(10, 2.0, 1.0)
    channels = build_network(unit_params, scaling)
    counts = sample_channel_counts(channels, NetState(0, 0, 10, 0, 10), 500, seed=0)
    assert counts.sum() == 500
    assert counts[0] == 500


def test_channel_split_follows_propensities(unit_params):
    scaling = ScalingConfig.from_ratios(10, 2.0, 1.0)
    channels = build_network(unit_params, scaling)
    state = NetState(5, 3, 2, 4, 6)
    rates = np.array([ch.propensity(state) for ch in channels])
    assert np.count_nonzero(rates) == 7
    n = 200_000
    counts = sample_channel_counts(channels, state, n, seed=8)
    expected = rates / rates.sum()
    se = np.sqrt(expected * (1.0 - expected) / n)
    assert np.all(np.abs(counts / n - expected) <= 4 * se)
    assert counts[rates == 0].sum() == 0


def test_write_csv_and_metadata(tmp_path):
    traj = mm_inf_simulate(2.0, 1.0, 0, 3.0, seed=4)
    write_csv(traj, tmp_path / "path.csv")
    write_csv(traj, tmp_path / "grid.csv", grid=np.linspace(0, 3.0, 7))
    write_metadata(traj, tmp_path / "path.json")
    with open(tmp_path / "path.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["time", "x", "P"]
    assert len(rows) == traj.event_count + 2
    with open(tmp_path / "grid.csv") as f:
        assert len(list(csv.reader(f))) == 8
    meta = json.loads((tmp_path / "path.json").read_text())
    assert meta["event_count"] == traj.event_count
    assert meta["seed"]["entropy"] == 4


@pytest.mark.slow
def test_unit_queue_paths_stay_small():
    for ss in replica_seeds(2024, 100):
        traj = mm_inf_simulate(1.0, 1.0, 0, 1e4, ss)
        assert traj.states.max() < 50


@pytest.mark.slow
def test_queue_relaxes_from_twice_its_load():
    N = 1000
    grid = np.linspace(10.0, 50.0, 401)
    good = 0
    for ss in replica_seeds(99, 100):
        recorder = GridRecorder(grid)
        mm_inf_simulate(float(N), 1.0, 2 * N, 50.0, ss, record_events=False, observers=[recorder])
        scaled = np.array([s[0] for s, _ in recorder.samples]) / N
        good += np.max(np.abs(scaled - 1.0)) <= 0.15
    assert good >= 95
