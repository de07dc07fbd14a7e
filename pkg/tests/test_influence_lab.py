import numpy as np
import pytest

from hjvariance.env_lattice import environment_from_mask, flip_site
from hjvariance.exceptions import ConfigError
from hjvariance.hjb_solver import SolverParams, backtrack_paths, occupation_times, solve_value, solver_box
from hjvariance.influence_lab import (
    build_shift_hash,
    check_shift_hash,
    classify_importance,
    comparison_constants,
    dependence_box,
    diagnose_displacement,
    exact_influences,
    flip_difference,
    influence_sites,
    lambda_counts,
    shifted_value,
    survey_sites,
    survey_statistics,
    talagrand_sum,
    tube_sites,
    value_under_shift,
    visited_sites,
)
from hjvariance.seeding import make_generator

from .helpers import random_env, small_params


def _trap():
    """Every site at level b except the start cube."""
    params = SolverParams(dt=1.0, h=0.5, q_max=2, horizon=4.0, start=(0.5, 0.5))
    box = solver_box(params, 2)
    high = np.ones(tuple(hi - lo for lo, hi in box), dtype=bool)
    high[tuple(-lo for lo, _ in box)] = False
    return params, environment_from_mask(box, high, 0.5, (0.0, 1.0))


def test_comparison_constants():
    assert comparison_constants(0.5) == (1.0, 1.0)
    assert comparison_constants(0.2) == pytest.approx((0.4, 1.6))


def test_flip_difference_matches_full_resolve(kinetic, drift_payoff):
    params = small_params(horizon=5.0)
    env = random_env(params, seed=4)
    table = solve_value(env, drift_payoff, kinetic, params)
    for site in [(0, 0), (1, 0), (2, -1)]:
        record = flip_difference(env, site, drift_payoff, kinetic, params, table=table)
        expected = solve_value(flip_site(env, site), drift_payoff, kinetic, params).value
        assert record.sigma_u == pytest.approx(expected, abs=1e-9)
        assert record.rho == pytest.approx((expected - table.value) / 2.0, abs=1e-9)
        weight = env.alpha if env.is_high(site) else 1.0 - env.alpha
        assert record.delta_weighted == pytest.approx(weight * (expected - table.value), abs=1e-9)
        assert not record.far_field


def test_far_sites_have_no_influence(kinetic, drift_payoff):
    params = small_params(horizon=2.0)
    env = random_env(params, seed=4)
    record = flip_difference(env, (5000, 0), drift_payoff, kinetic, params)
    assert record.far_field
    assert record.rho == 0.0
    assert record.sigma_u == record.u


def test_sites_outside_the_sampled_box_have_no_influence(kinetic, drift_payoff):
    params = small_params()
    env = random_env(params, seed=4)
    (lo, hi), _ = dependence_box(env, drift_payoff, kinetic, params)
    for site in [(hi, 0), (lo - 1, 0), (0, hi + 1)]:
        record = flip_difference(env, site, drift_payoff, kinetic, params)
        assert record.far_field
        assert record.rho == 0.0
        assert record.sigma_u == record.u
        assert record.omega is None


def test_flips_outside_the_dependence_box_leave_the_value(kinetic, drift_payoff):
    params = small_params()
    env = random_env(params, seed=4, margin=2)
    table = solve_value(env, drift_payoff, kinetic, params)
    (lo, hi), _ = dependence_box(env, drift_payoff, kinetic, params)
    for site in [(hi, 0), (lo - 1, 3), (2, hi + 1)]:
        record = flip_difference(env, site, drift_payoff, kinetic, params, table=table)
        assert record.far_field
        assert record.omega == env.level(site)
        assert solve_value(flip_site(env, site), drift_payoff, kinetic, params).value == pytest.approx(
            record.u, abs=1e-12
        )


def test_influence_sites_scans_the_whole_box_when_small(kinetic, drift_payoff):
    params = small_params()
    env = random_env(params, seed=2)
    table = solve_value(env, drift_payoff, kinetic, params)
    sites, radius = influence_sites(env, table, 10_000)
    assert radius is None
    assert len(sites) == 21 * 21
    assert set(sites) == {(x, y) for x in range(-10, 11) for y in range(-10, 11)}


def test_influence_sites_falls_back_to_a_stencil_wide_tube(kinetic, drift_payoff):
    params = small_params()
    env = random_env(params, seed=2)
    table = solve_value(env, drift_payoff, kinetic, params)
    sites, radius = influence_sites(env, table, 10, tube_radius=1)
    assert radius == 2
    assert sites == tube_sites(env, backtrack_paths(table, env), 2)


@pytest.mark.parametrize("seed", range(5))
def test_drops_are_carried_by_important_sites(seed, kinetic, drift_payoff):
    params = small_params()
    delta = 0.1
    env = random_env(params, seed=seed)
    table = solve_value(env, drift_payoff, kinetic, params)
    survey = classify_importance(env, delta, drift_payoff, kinetic, params, table=table)
    if survey.partial:
        pytest.skip("path enumeration hit its limit")
    sites, _ = influence_sites(env, table, 10_000)
    records = survey_sites(env, sites, drift_payoff, kinetic, params, table=table, survey=survey)
    important = set(survey.important)
    limit_important = set(survey.limit_important)
    paths = backtrack_paths(table, env, delta)
    assert paths

    for record in records:
        drop = record.u - record.sigma_u
        if drop > 1e-9:
            assert record.site in limit_important
        if drop > delta:
            assert record.site in important
        for path in paths:
            times = occupation_times(path)
            assert drop <= env.spread * times.get(record.site, 0.0) + path.slack + 1e-9

    sample = survey_statistics(records, survey)
    assert sample.inclusion_violations == 0
    assert sample.very_important == len(survey.very_important) <= 1
    assert sample.max_sq >= max(sample.not_very_max_sq, sample.very_max_sq)


def test_survey_statistics_of_a_trap(kinetic, flat_payoff):
    params, env = _trap()
    survey = classify_importance(env, 0.1, flat_payoff, kinetic, params)
    records = survey_sites(env, [(0, 0), (1, 1), (-1, 0)], flat_payoff, kinetic, params, survey=survey)
    sample = survey_statistics(records, survey)
    assert sample.important == 1
    assert sample.very_important == 1
    assert sample.very_max_sq == pytest.approx(16.0)
    assert sample.not_very_max_sq == 0.0
    assert sample.max_sq == pytest.approx(16.0)
    assert sample.inclusion_violations == 0
    assert not sample.partial


def test_single_low_cube_is_very_important(kinetic, flat_payoff):
    params, env = _trap()
    survey = classify_importance(env, 0.1, flat_payoff, kinetic, params)
    assert survey.important == [(0, 0)]
    assert survey.very_important == [(0, 0)]
    assert survey.limit_important == [(0, 0)]
    assert survey.refined_nested is True
    assert survey.stable_under_refinement is True
    assert survey.path_count == 1
    assert not survey.displacement_event
    assert survey.classification((0, 0)).very_important

    record = flip_difference(env, (0, 0), flat_payoff, kinetic, params, survey=survey)
    assert record.u == pytest.approx(0.0)
    assert record.sigma_u == pytest.approx(-4.0)
    assert record.rho == pytest.approx(-2.0)
    assert record.important and record.very_important


def test_survey_rejects_non_positive_delta(kinetic, flat_payoff):
    params, env = _trap()
    with pytest.raises(ConfigError):
        classify_importance(env, 0.0, flat_payoff, kinetic, params)


def test_lambda_counts():
    counts = lambda_counts([(0, 0), (1, 0)], 2)
    assert counts == {(0, 0): 1, (1, 0): 2, (2, 0): 1, (0, 1): 1, (1, 1): 2, (2, 1): 1}


def test_displacement_needs_paths():
    with pytest.raises(ConfigError):
        diagnose_displacement([], 16.0)


def test_tube_of_radius_zero_is_the_visited_set(kinetic, drift_payoff):
    params = small_params(horizon=5.0)
    env = random_env(params, seed=8)
    paths = backtrack_paths(solve_value(env, drift_payoff, kinetic, params), env)
    assert set(tube_sites(env, paths, 0)) == set(visited_sites(paths[0]))
    assert len(tube_sites(env, paths, 1)) > len(tube_sites(env, paths, 0))


def test_talagrand_two_point():
    assert talagrand_sum({0: [0.5, -0.5]}).total == pytest.approx(0.25)


def test_talagrand_sum_of_two_independent_sites():
    exact = exact_influences(lambda c: c[0] + c[1], 2, 0.5, (0.0, 1.0))
    assert exact.variance == pytest.approx(0.5)
    report = talagrand_sum(exact.rho, weights=exact.weights)
    assert report.terms[0] == pytest.approx(0.25)
    assert report.total == pytest.approx(0.5)


def test_talagrand_ignores_silent_sites():
    assert talagrand_sum({"quiet": [0.0, 0.0, 0.0]}).total == 0.0
    with pytest.raises(ConfigError):
        talagrand_sum({"short": [1.0]})


def test_exact_influences_bound_the_variance():
    exact = exact_influences(lambda c: max(c[0], c[1], c[2]), 3, 0.3, (0.0, 1.0))
    report = talagrand_sum(exact.rho, weights=exact.weights)
    assert exact.variance > 0.0
    assert report.total > 0.0
    assert exact.variance <= 10.0 * report.total


def test_hash_with_two_values_is_uniform():
    shift_hash = build_shift_hash(2, 0.5)
    assert shift_hash.block == 4
    assert np.allclose(shift_hash.distribution, [0.5, 0.5])


@pytest.mark.parametrize("m", [2, 4, 8, 16])
def test_hash_law_and_lipschitz(m):
    report = check_shift_hash(build_shift_hash(m, 0.5), 500, make_generator(m))
    assert report.max_probability <= 3.0 / m
    assert report.within_bound
    assert report.lipschitz_violations == 0
    assert report.range_ok
    assert sum(report.distribution) == pytest.approx(1.0)


def test_exhaustive_hash_check_for_two_values():
    report = check_shift_hash(build_shift_hash(2, 0.5), 10, make_generator(0))
    assert report.lipschitz_checked == 16 * 4


def test_hash_rejects_small_m():
    with pytest.raises(ConfigError):
        build_shift_hash(1, 0.5)


def test_zero_shift_keeps_the_value(kinetic, drift_payoff):
    params = small_params(horizon=4.0)
    env = random_env(params, seed=12, margin=2)
    u = solve_value(env, drift_payoff, kinetic, params).value
    assert value_under_shift(env, (0, 0), drift_payoff, kinetic, params) == pytest.approx(u, abs=1e-12)
    blocks = np.zeros((2, 4), dtype=bool)
    shift_hash = build_shift_hash(2, 0.5)
    assert shifted_value(env, blocks, drift_payoff, kinetic, params, shift_hash) == pytest.approx(u, abs=1e-12)


def test_two_point_talagrand_is_exact_for_an_indicator():
    exact = exact_influences(lambda c: float(c[0] == 1.0), 1, 0.5, (0.0, 1.0))
    total = talagrand_sum(exact.rho, weights=exact.weights).total
    assert total == 0.25
    assert abs(total - exact.variance) <= 1e-15
