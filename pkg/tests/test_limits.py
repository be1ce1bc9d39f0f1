import math

import numpy as np
import pytest

from crn_regimes.limits import (
    OdeSolution,
    OdeSystem,
    default_time_step,
    fixed_point,
    integrate,
    jacobian,
    limiting_ode,
    p1,
    p3_coefficients,
    production_limit,
    saturation_level,
    stability_report,
)
from crn_regimes.model import AdmissibleRegionError, KineticParams, Regime, classify_regime, condition_value


def _zero(t, x):
    return np.zeros_like(x)


def _always(x):
    return True


def _random_params(rng) -> KineticParams:
    return KineticParams(**{name: float(rng.uniform(0.5, 2.0)) for name in
                            ("k_RS", "k_SR", "k_LR", "k_Q0", "k_0Q", "k_RI", "k_IL", "k_QU")})


def _sequestration_draw(rng):
    """Random rates and ratios with k_IL > k_0Q and phi < C_U."""
    params = _random_params(rng)
    if params.k_IL < params.k_0Q:
        rates = params.as_dict()
        rates["k_IL"], rates["k_0Q"] = rates["k_0Q"], rates["k_IL"]
        params = KineticParams(**rates)
    C_M = float(rng.uniform(1.2, 4.0))
    C_U = condition_value(params, C_M) * float(rng.uniform(1.5, 3.0))
    return params, C_M, C_U


def test_stable_rhs_vanishes_at_its_fixed_point(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    assert system.rhs(0.0, np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert fixed_point(Regime.STABLE, stable_params, 2.0, 1.0).tolist() == [1.0]


def test_sequestration_u_equation_vanishes_at_s_inf(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    for u in (0.3, 0.75, 5.0):
        assert system.rhs(0.0, np.array([0.5, u]))[1] == pytest.approx(0.0, abs=1e-15)


def test_sequestration_fixed_point(sequestration_params):
    np.testing.assert_allclose(fixed_point(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0), [0.5, 0.75])


def test_saturation_fixed_point(saturation_params):
    x = fixed_point(Regime.SATURATION, saturation_params, 2.0, 0.25)
    np.testing.assert_allclose(x, [0.5, 0.25], atol=1e-12)
    system = limiting_ode(Regime.SATURATION, saturation_params, 2.0, 0.25)
    assert np.max(np.abs(system.rhs(0.0, x))) < 1e-12


def test_under_loaded_fixed_point(sequestration_params):
    system = limiting_ode(Regime.UNDER_LOADED, sequestration_params, 2.0, 10.0, regulated=False)
    x = fixed_point(Regime.UNDER_LOADED, sequestration_params, 2.0, 10.0)
    assert x.tolist() == [0.5]
    assert system.rhs(0.0, x)[0] == pytest.approx(0.0, abs=1e-15)


def test_fixed_points_are_equilibria_for_random_draws():
    rng = np.random.default_rng(2024)
    checked = set()
    for _ in range(200):
        params = _random_params(rng)
        C_M = float(rng.uniform(1.2, 4.0))
        C_U = float(rng.uniform(0.1, 5.0))
        for regulated in (True, False):
            regime = classify_regime(params, C_M, C_U, regulated)
            if regime is Regime.BOUNDARY:
                continue
            system = limiting_ode(regime, params, C_M, C_U, regulated)
            x = fixed_point(regime, params, C_M, C_U)
            assert np.max(np.abs(system.rhs(0.0, x))) < 1e-10
            checked.add(regime)
    assert checked == {Regime.STABLE, Regime.UNDER_LOADED, Regime.OPTIMAL_SEQUESTRATION, Regime.SATURATION}


def test_mismatched_regime_is_rejected(stable_params):
    with pytest.raises(AdmissibleRegionError, match="classify as Stable"):
        limiting_ode(Regime.SATURATION, stable_params, 2.0, 1.0)


def test_boundary_has_no_fixed_point(unit_params):
    with pytest.raises(AdmissibleRegionError):
        fixed_point(Regime.BOUNDARY, unit_params, 2.0, 1.0)
    with pytest.raises(AdmissibleRegionError, match="boundary"):
        limiting_ode(Regime.BOUNDARY, unit_params, 2.0, 1.0)


def test_rk4_linear_closed_form(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    sol = integrate(system, [0.0], 1.0, 1e-3)
    assert sol.times[-1] == pytest.approx(1.0)
    assert sol.states[-1, 0] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-9)
    assert sol.at(0.5)[0] == pytest.approx(1.0 - math.exp(-0.5), abs=1e-6)
    assert not sol.exited


def test_rk4_constant_solution():
    system = OdeSystem(Regime.STABLE, ("x", "y"), _zero, _always, "anywhere")
    sol = integrate(system, [0.3, -2.0], 2.0, 0.1)
    assert np.all(sol.states == np.array([0.3, -2.0]))


def test_rk4_fourth_order(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    exact = 1.0 - math.exp(-1.0)
    coarse = abs(integrate(system, [0.0], 1.0, 0.2).states[-1, 0] - exact)
    fine = abs(integrate(system, [0.0], 1.0, 0.1).states[-1, 0] - exact)
    assert 14.0 < coarse / fine < 18.0


def test_grid_ends_at_horizon(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    sol = integrate(system, [0.5], 1.0, 0.3)
    assert len(sol.times) == 5
    assert sol.dt == pytest.approx(0.25)
    assert sol.times[-1] == pytest.approx(1.0)


def test_zero_horizon_keeps_initial_state(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    sol = integrate(system, [0.7], 0.0, 1e-3)
    assert sol.states.tolist() == [[0.7]]


def test_exit_from_region_is_recorded(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    sol = integrate(system, [0.9, 0.01], 5.0, 1e-3)
    assert sol.exited
    assert 0.0 < sol.exit_time < 0.1
    assert np.all(sol.states[:, 1] > 0.0)


def test_initial_state_outside_region(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    with pytest.raises(AdmissibleRegionError, match="outside the region"):
        integrate(system, [1.2, 0.5], 1.0, 1e-3)


def test_integrate_rejects_bad_step(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    with pytest.raises(ValueError, match="dt"):
        integrate(system, [0.0], 1.0, 0.0)


def test_default_time_step(saturation_params):
    assert default_time_step(saturation_params) == pytest.approx(1e-3 / 12.0)


def test_solution_csv(tmp_path, stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    sol = integrate(system, [0.0], 1.0, 0.25)
    sol.to_csv(tmp_path / "ode.csv", production=production_limit(Regime.STABLE, stable_params, sol))
    lines = (tmp_path / "ode.csv").read_text().splitlines()
    assert lines[0] == "t,q,production"
    assert len(lines) == 6


def test_stable_eigenvalue(stable_params):
    report = stability_report(Regime.STABLE, stable_params, 2.0, 1.0)
    assert report.real_parts == (-stable_params.k_Q0,)
    assert report.stable


def test_sequestration_polynomial_and_jacobian(sequestration_params):
    assert p3_coefficients(sequestration_params, 2.0) == pytest.approx((9.0, 14.0, 8.0))
    report = stability_report(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    assert report.stable
    assert all(r < 0 for r in report.real_parts)
    assert report.trace == pytest.approx(-14.0 / 9.0, abs=1e-6)
    assert report.determinant == pytest.approx(8.0 / 9.0, abs=1e-6)


def test_sequestration_stability_for_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(100):
        params, C_M, C_U = _sequestration_draw(rng)
        assert classify_regime(params, C_M, C_U) is Regime.OPTIMAL_SEQUESTRATION
        assert min(p3_coefficients(params, C_M)) > 0
        report = stability_report(Regime.OPTIMAL_SEQUESTRATION, params, C_M, C_U)
        assert report.stable


def test_jacobian_of_linear_system(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    np.testing.assert_allclose(jacobian(system, [0.4]), [[-stable_params.k_Q0]], atol=1e-8)


def test_saturation_root_and_monotone_approach(saturation_params):
    s_inf = saturation_level(saturation_params, 2.0, 0.25)
    assert abs(p1(saturation_params, 2.0, 0.25, s_inf)) < 1e-10
    report = stability_report(Regime.SATURATION, saturation_params, 2.0, 0.25)
    assert report.stable
    system = limiting_ode(Regime.SATURATION, saturation_params, 2.0, 0.25)
    for start in (0.55, 0.45):
        sol = integrate(system, [start, 0.25], 5.0, 1e-3)
        s = sol.states[:, 0]
        gap = np.abs(s - s_inf)
        assert np.all(np.diff(gap) <= 1e-15)
        assert gap[-1] < 0.01 * gap[0]


def test_stable_production_is_linear(stable_params):
    system = limiting_ode(Regime.STABLE, stable_params, 2.0, 1.0)
    sol = integrate(system, [1.0], 2.0, 1e-2)
    assert production_limit(Regime.STABLE, stable_params, sol)(2.0) == pytest.approx(2.0)


def test_sequestration_production_at_fixed_point(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    sol = integrate(system, [0.5, 0.75], 3.0, 1e-3)
    prod = production_limit(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, sol)
    assert prod(3.0) == pytest.approx(sequestration_params.k_0Q * 3.0, abs=1e-9)


def test_sequestration_production_without_sequestered_particles(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    times = np.linspace(0.0, 2.0, 21)
    sol = OdeSolution(system, times, np.zeros((21, 2)), 0.1)
    prod = production_limit(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, sol)
    np.testing.assert_allclose(prod(times), sequestration_params.k_IL * times, atol=1e-12)


def test_production_outside_solved_interval(sequestration_params):
    system = limiting_ode(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, 2.0, 10.0)
    sol = integrate(system, [0.5, 0.75], 1.0, 1e-2)
    with pytest.raises(ValueError, match="outside the solved interval"):
        production_limit(Regime.OPTIMAL_SEQUESTRATION, sequestration_params, sol)(2.0)


def test_under_loaded_level_converges(sequestration_params):
    p = sequestration_params
    system = limiting_ode(Regime.UNDER_LOADED, p, 2.0, 10.0, regulated=False)
    level = 1.0 - p.k_0Q / p.k_IL
    for start in (0.05, 0.3, 0.7, 0.95):
        sol = integrate(system, [start], 40.0 / p.k_IL, 1e-3)
        assert abs(sol.states[-1, 0] - level) < 1e-6


@pytest.mark.parametrize(
    "regime, fixture, C_U, regulated",
    [
        (Regime.STABLE, "stable_params", 1.0, True),
        (Regime.UNDER_LOADED, "sequestration_params", 10.0, False),
        (Regime.OPTIMAL_SEQUESTRATION, "sequestration_params", 10.0, True),
        (Regime.SATURATION, "saturation_params", 0.25, True),
    ],
)
def test_fixed_point_is_preserved(request, regime, fixture, C_U, regulated):
    params = request.getfixturevalue(fixture)
    system = limiting_ode(regime, params, 2.0, C_U, regulated)
    x = fixed_point(regime, params, 2.0, C_U)
    sol = integrate(system, x, 100.0, 1e-2)
    assert not sol.exited
    assert np.max(np.abs(sol.states - x)) < 1e-9


@pytest.mark.parametrize(
    "regime, fixture, C_U, regulated, start",
    [
        (Regime.UNDER_LOADED, "sequestration_params", 10.0, False, [0.2]),
        (Regime.SATURATION, "saturation_params", 0.25, True, [0.4, 0.3]),
    ],
)
def test_production_follows_input_rate(request, regime, fixture, C_U, regulated, start):
    params = request.getfixturevalue(fixture)
    system = limiting_ode(regime, params, 2.0, C_U, regulated)
    sol = integrate(system, start, 2.0, 1e-2)
    prod = production_limit(regime, params, sol)
    np.testing.assert_allclose(prod([0.0, 1.0, 2.0]), [0.0, params.k_0Q, 2.0 * params.k_0Q])
