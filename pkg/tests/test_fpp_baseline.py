import pytest

from hjvariance.env_lattice import load_snapshot
from hjvariance.exceptions import ConfigError, InstanceTooLargeError, InsufficientMarginError, SnapshotFormatError
from hjvariance.fpp_baseline import (
    brute_force_distance,
    flip_edge,
    fpp_box,
    fpp_distance,
    fpp_variance_curve,
    load_edge_snapshot,
    sample_edge_environment,
    save_edge_snapshot,
)
from hjvariance.runconfig import load_run_config

LEVELS = (1.0, 2.0)


def test_margin_covers_competitive_paths():
    assert fpp_box((0, 0), (3, 4), LEVELS) == ((-4, 8), (-4, 9))


def test_constant_weights_give_the_l1_distance():
    env = sample_edge_environment(fpp_box((0, 0), (3, 4), LEVELS), 1.0, LEVELS, 0)
    result = fpp_distance(env, (3, 4))
    assert result.distance == 7.0
    assert result.path[0] == (0, 0) and result.path[-1] == (3, 4)
    assert len(result.path) == 8


@pytest.mark.parametrize("seed", range(15))
def test_dijkstra_matches_brute_force_on_small_boxes(seed):
    env = sample_edge_environment(((0, 4), (0, 4)), 0.5, LEVELS, seed)
    for target in [(3, 3), (2, 1), (0, 3)]:
        expected = brute_force_distance(env, target, (0, 0))
        assert fpp_distance(env, target, (0, 0), check_margin=False).distance == pytest.approx(expected)


def test_path_weights_add_up():
    env = sample_edge_environment(fpp_box((0, 0), (6, 0), LEVELS), 0.5, LEVELS, 3)
    result = fpp_distance(env, (6, 0))
    total = sum(env.weight(u, v) for u, v in zip(result.path[:-1], result.path[1:]))
    assert total == pytest.approx(result.distance)


def test_single_edge_flip_moves_distance_by_at_most_the_spread():
    env = sample_edge_environment(fpp_box((0, 0), (6, 0), LEVELS), 0.5, LEVELS, 11)
    base = fpp_distance(env, (6, 0))
    edges = list(zip(base.path[:-1], base.path[1:])) + [((0, 0), (0, 1)), ((3, 0), (3, -1))]
    for u, v in edges:
        flipped = fpp_distance(flip_edge(env, u, v), (6, 0))
        assert abs(flipped.distance - base.distance) <= LEVELS[1] - LEVELS[0] + 1e-12


def test_insufficient_margin_is_rejected():
    env = sample_edge_environment(((0, 7), (0, 2)), 0.5, LEVELS, 0)
    with pytest.raises(InsufficientMarginError):
        fpp_distance(env, (6, 0))


def test_edge_weights_must_be_positive():
    with pytest.raises(ConfigError):
        sample_edge_environment(((0, 4), (0, 4)), 0.5, (0.0, 1.0), 0)


def test_brute_force_is_limited_to_small_boxes():
    env = sample_edge_environment(((0, 6), (0, 6)), 0.5, LEVELS, 0)
    with pytest.raises(InstanceTooLargeError):
        brute_force_distance(env, (5, 5))


def test_edge_snapshot_round_trip(tmp_path):
    env = sample_edge_environment(((-3, 5), (-2, 4)), 0.3, LEVELS, 99)
    path = save_edge_snapshot(env, tmp_path / "edges.hjvr")
    assert load_edge_snapshot(path) == env
    with pytest.raises(SnapshotFormatError):
        load_snapshot(path)


def test_variance_curve_over_lengths():
    config = load_run_config(
        {}, ["fpp.lengths=[2, 4, 6]", "fpp.samples=6", "fpp.bootstrap_resamples=100"]
    )
    result = fpp_variance_curve(config)
    assert [p.t for p in result.curve.points] == [2.0, 4.0, 6.0]
    assert len(result.rows) == 18
    assert all(2.0 <= r.u <= 4.0 for r in result.rows if r.t == 2.0)
    again = fpp_variance_curve(config)
    assert [r.u for r in again.rows] == [r.u for r in result.rows]
    assert [t for t, _ in result.trend.ratios] == [2.0, 4.0, 6.0]
    assert result.trend.ratios[0][1] == pytest.approx(result.curve.points[0].variance / 2.0)
