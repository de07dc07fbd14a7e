"""Long randomized checks; run with ``pytest -m slow``."""

import numpy as np
import pytest

from hjvariance.env_lattice import sample_environment
from hjvariance.fpp_baseline import (
    brute_force_distance,
    flip_edge,
    fpp_box,
    fpp_distance,
    sample_edge_environment,
)
from hjvariance.hjb_solver import (
    Payoff,
    SolverParams,
    backtrack_paths,
    cost_bound_report,
    finite_speed_bounds,
    finite_speed_violations,
    hopf_lax_tolerance,
    solve_value,
    solver_box,
)
from hjvariance.influence_lab import (
    build_shift_hash,
    check_shift_hash,
    comparison_constants,
    far_field_radius,
    flip_difference,
)
from hjvariance.seeding import make_generator

from .helpers import random_env, small_params

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("h, q_max", [(0.5, 2), (0.25, 4)])
def test_hopf_lax_at_long_horizon(kinetic, drift_payoff, h, q_max):
    params = SolverParams(dt=1.0, h=h, q_max=q_max, horizon=32.0)
    env = sample_environment(solver_box(params, q_max), 1.0, (0.0, 1.0), 0)
    u = solve_value(env, drift_payoff, kinetic, params).value
    assert abs(u / 32.0 - 0.5) <= 0.05
    assert abs(u - 16.0) <= hopf_lax_tolerance(kinetic, (1.0, 0.0), h, 1.0, 32.0) + 1e-9


def test_cost_bounds_and_finite_speed_on_many_instances(kinetic):
    generator = np.random.default_rng(500)
    for i in range(500):
        eta = tuple(float(v) for v in generator.uniform(-1.5, 1.5, size=2))
        payoff = Payoff(eta=eta)
        params = small_params(horizon=float(generator.integers(2, 7)), q_max=2)
        env = random_env(params, seed=5000 + i)
        table = solve_value(env, payoff, kinetic, params)
        radius = finite_speed_bounds(kinetic, payoff.growth_constant(params.start), env.spread).radius
        for path in backtrack_paths(table, env, 0.0) + backtrack_paths(table, env, 0.5, limit=50):
            report = cost_bound_report(path, kinetic, (env.a, env.b), params.h)
            assert report.lower_violations == 0
            assert report.upper_violations == 0
            assert finite_speed_violations(path, radius) == 0


def test_flip_influence_on_many_pairs(kinetic, drift_payoff):
    generator = np.random.default_rng(1000)
    for i in range(100):
        alpha = float(generator.uniform(0.1, 0.9))
        params = small_params(horizon=4.0)
        env = random_env(params, seed=9000 + i, alpha=alpha)
        table = solve_value(env, drift_payoff, kinetic, params)
        low, high = comparison_constants(alpha)
        for _ in range(10):
            site = tuple(int(v) for v in generator.integers(-6, 7, size=2))
            record = flip_difference(env, site, drift_payoff, kinetic, params, table=table)
            if not env.is_high(site):
                assert record.sigma_u <= record.u + 1e-12
            assert abs(record.u - record.sigma_u) <= env.spread * params.horizon + 1e-12
            assert low * abs(record.rho) - 1e-12 <= abs(record.delta_weighted) <= high * abs(record.rho) + 1e-12
        far = int(far_field_radius(env, drift_payoff, kinetic, params)) + 10
        assert flip_difference(env, (far, 0), drift_payoff, kinetic, params, table=table).rho == 0.0


def test_shift_hash_at_every_size():
    for m in (4, 8, 16, 32):
        report = check_shift_hash(build_shift_hash(m, 0.5), 10_000, make_generator(m))
        assert report.max_probability <= 3.0 / m
        assert report.lipschitz_violations == 0


def test_fpp_cross_checks():
    levels = (1.0, 2.0)
    for seed in range(50):
        env = sample_edge_environment(((0, 4), (0, 4)), 0.5, levels, seed)
        assert fpp_distance(env, (3, 3), check_margin=False).distance == pytest.approx(
            brute_force_distance(env, (3, 3))
        )
    generator = np.random.default_rng(10)
    for trial in range(1000):
        env = sample_edge_environment(fpp_box((0, 0), (5, 0), levels), 0.5, levels, 20_000 + trial)
        base = fpp_distance(env, (5, 0)).distance
        x, y = int(generator.integers(-1, 5)), int(generator.integers(-1, 4))
        flipped = fpp_distance(flip_edge(env, (x, y), (x + 1, y)), (5, 0)).distance
        assert abs(flipped - base) <= levels[1] - levels[0] + 1e-12
