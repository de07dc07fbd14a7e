import math

import numpy as np
import pytest

from hjvariance.exceptions import DegenerateDataError
from hjvariance.items import HorizonStats, SampleRow, VarianceCurve
from hjvariance.runconfig import load_run_config
from hjvariance.variance_suite import (
    attach_growth,
    bootstrap_variance_ci,
    effective_hamiltonian,
    fit_growth,
    growth_trend,
    ratio_trend,
    run_campaign,
    run_shift_closeness,
    unbiased_variance,
)

HORIZONS = [8.0, 16.0, 32.0, 64.0]


def small_campaign(*overrides):
    return load_run_config(
        {},
        [
            "solver.q_max=2",
            "campaign.horizons=[5, 6, 8]",
            "campaign.samples=8",
            "campaign.bootstrap_resamples=100",
            *overrides,
        ],
    )


def test_unbiased_variance():
    assert unbiased_variance([1.0, 2.0, 3.0, 4.0]) == pytest.approx(5.0 / 3.0)
    assert unbiased_variance([1e9 + 1.0, 1e9 + 2.0, 1e9 + 3.0, 1e9 + 4.0]) == pytest.approx(5.0 / 3.0, rel=1e-9)
    with pytest.raises(DegenerateDataError):
        unbiased_variance([1.0])


def test_bootstrap_interval_is_reproducible_and_brackets_the_estimate():
    values = np.random.default_rng(3).normal(size=200)
    low, high = bootstrap_variance_ci(values, 1000, seed=9)
    assert (low, high) == bootstrap_variance_ci(values, 1000, seed=9)
    assert low <= unbiased_variance(values) <= high
    assert 0.6 < low < high < 1.5


def test_fit_recovers_t_over_log_t():
    t = np.array(HORIZONS)
    report = fit_growth(t, 3.0 * t / np.log(t))
    fit = report.fit("t_over_log_t")
    assert fit.coefficient == pytest.approx(3.0, abs=1e-6)
    assert fit.residual < 1e-9
    assert report.selected == "t_over_log_t"
    assert report.kappa < 1.0


def test_fit_of_constant_variance_has_zero_exponent():
    report = fit_growth(HORIZONS, [5.0] * 4)
    assert report.kappa == pytest.approx(0.0, abs=1e-9)
    assert report.fit("power").coefficient == pytest.approx(5.0)


def test_fit_of_linear_variance_prefers_the_simpler_model():
    t = np.array(HORIZONS)
    report = fit_growth(t, 2.0 * t)
    assert report.kappa == pytest.approx(1.0, abs=1e-9)
    assert report.fit("linear").coefficient == pytest.approx(2.0)
    assert report.selected == "linear"


@pytest.mark.parametrize(
    "horizons, variances",
    [
        (HORIZONS, [1.0, 0.0, 2.0, 3.0]),
        (HORIZONS[:2], [1.0, 2.0]),
        ([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]),
    ],
)
def test_fit_rejects_degenerate_input(horizons, variances):
    with pytest.raises(DegenerateDataError):
        fit_growth(horizons, variances)


def _point(t, variance, width):
    return HorizonStats(
        t=t, samples=10, mean=0.0, variance=variance, ci_low=variance - width, ci_high=variance + width
    )


def test_ratio_trend_flags_clear_increases():
    steady = VarianceCurve(label="u", points=[_point(8, 8.0, 1.0), _point(16, 15.0, 1.0), _point(32, 28.0, 2.0)])
    assert ratio_trend(steady).non_increasing
    rising = VarianceCurve(label="u", points=[_point(8, 8.0, 0.5), _point(16, 40.0, 1.0)])
    trend = ratio_trend(rising)
    assert trend.violations == [(16.0, 2.5)]
    assert not trend.non_increasing


def _curve(variances):
    return attach_growth(
        VarianceCurve(label="u", points=[_point(t, v, 0.1 * v) for t, v in zip(HORIZONS, variances)])
    )


def test_ratio_trend_checks_the_upper_exponent_bound():
    noisy = [0.5 * t**1.4 * f for t, f in zip(HORIZONS, [1.25, 0.75, 1.25, 0.75])]
    assert ratio_trend(_curve(noisy)).kappa_not_above_one is False
    assert ratio_trend(_curve([0.5 * t**1.4 for t in HORIZONS])).kappa_not_above_one is False
    assert ratio_trend(_curve([2.0 * t**0.5 for t in HORIZONS])).kappa_not_above_one is True


def test_growth_trend_verdicts():
    flat = growth_trend("flat", HORIZONS, [3.0] * 4)
    assert flat.bounded is True
    assert flat.slope == pytest.approx(0.0, abs=1e-12)
    rising = growth_trend("rising", HORIZONS, [2.0 * math.log(t) for t in HORIZONS])
    assert rising.slope == pytest.approx(2.0)
    assert rising.bounded is False
    short = growth_trend("short", HORIZONS[:2], [1.0, 5.0])
    assert short.bounded is None and short.slope is None
    with pytest.raises(DegenerateDataError):
        growth_trend("mismatch", HORIZONS, [1.0])


def test_shift_closeness_per_horizon():
    rows = [
        SampleRow(t=8.0, index=0, seed=1, u=4.0, shifted_u=3.0),
        SampleRow(t=8.0, index=1, seed=2, u=4.0, shifted_u=7.0),
        SampleRow(t=16.0, index=0, seed=3, u=8.0, shifted_u=8.5),
        SampleRow(t=16.0, index=1, seed=4, u=8.0),
    ]
    report = run_shift_closeness(rows, 0.5)
    assert [c.t for c in report] == [8.0, 16.0]
    assert [c.m for c in report] == [2, 4]
    assert [c.samples for c in report] == [2, 1]
    assert report[0].max_gap == 3.0
    assert report[0].mean_gap == 2.0
    assert report[0].ratio == pytest.approx(3.0 / math.sqrt(8.0))
    assert report[1].ratio == pytest.approx(0.125)
    assert run_shift_closeness(rows[3:], 0.5) == []


def test_campaign_is_reproducible():
    config = small_campaign()
    first = run_campaign(config)
    second = run_campaign(config)
    assert len(first.rows) == 24
    assert [r.u for r in first.rows] == [r.u for r in second.rows]
    assert first.curve.horizons == [5.0, 6.0, 8.0]
    assert first.curve.growth is not None
    assert not first.partial


def test_campaign_rows_do_not_depend_on_worker_count():
    config = small_campaign("campaign.horizons=[5]", "campaign.samples=3")
    serial = run_campaign(config, jobs=1)
    parallel = run_campaign(config, jobs=2)
    assert [(r.index, r.seed, r.u) for r in serial.rows] == [(r.index, r.seed, r.u) for r in parallel.rows]


def test_campaign_with_shift_averaging_and_influence():
    config = small_campaign(
        "campaign.horizons=[5, 6]",
        "campaign.shift_averaging=true",
        "campaign.influence_survey=true",
        "campaign.influence_samples=2",
    )
    result = run_campaign(config)
    assert all(r.shifted_u is not None and r.shift is not None for r in result.rows)
    assert all(0 <= c < 2 for r in result.rows for c in r.shift)
    assert result.shifted_curve is not None
    assert all(d.holds for d in result.decomposition)
    assert [c.m for c in result.closeness] == [2, 2]
    assert [r.samples_surveyed for r in result.talagrand] == [2, 2]
    assert all(r.site_sum >= 0.0 for r in result.talagrand)
    assert [r.sites_surveyed for r in result.talagrand] == [25 * 25, 29 * 29]
    assert not any(r.truncated for r in result.talagrand)
    assert all(r.tube_radius is None for r in result.talagrand)
    assert [s.samples for s in result.survey_stats] == [2, 2]
    assert all(s.inclusion_violations == 0 for s in result.survey_stats)
    assert {b.label for b in result.bounded} >= {"shift_closeness", "not_very_important_max_sq"}
    assert all(b.bounded is None for b in result.bounded)


def test_large_dependence_boxes_fall_back_to_a_flagged_tube():
    config = small_campaign(
        "campaign.horizons=[5]",
        "campaign.samples=2",
        "campaign.influence_survey=true",
        "campaign.influence_samples=2",
        "influence.site_limit=10",
        "influence.tube_radius=1",
    )
    (report,) = run_campaign(config).talagrand
    assert report.truncated
    assert report.tube_radius == 2
    assert report.sites_surveyed < 25 * 25


def test_not_very_important_drops_do_not_grow_in_a_constant_environment():
    config = small_campaign(
        "campaign.horizons=[5, 6, 7]",
        "campaign.samples=2",
        "campaign.influence_survey=true",
        "campaign.influence_samples=2",
        "environment.alpha=1.0",
    )
    result = run_campaign(config)
    values = [s.not_very_max_sq for s in result.survey_stats]
    assert len(values) == 3
    assert values[0] > 0.0
    assert max(values) - min(values) <= 1e-12
    assert all(s.max_very_important == 0 for s in result.survey_stats)
    assert all(s.very_with_displacement_frequency == 0.0 for s in result.survey_stats)
    trends = {b.label: b for b in result.bounded}
    assert trends["not_very_important_max_sq"].bounded is True
    assert trends["c_fit"].bounded is True


def test_campaign_without_time_fails():
    with pytest.raises(DegenerateDataError):
        run_campaign(small_campaign(), budget=-1.0)


def test_effective_hamiltonian_in_a_constant_environment():
    config = small_campaign("environment.alpha=1.0", "campaign.samples=2")
    [estimate] = effective_hamiltonian(config, etas=[(1.0, 0.0)])
    assert estimate.reference == pytest.approx(0.5)
    assert estimate.estimate == pytest.approx(0.5, abs=1e-9)
    assert estimate.extrapolated == pytest.approx(0.5, abs=1e-9)


def test_effective_hamiltonian_respects_level_bounds():
    config = small_campaign("payoff.eta=[0.0, 0.0]", "campaign.samples=3")
    [estimate] = effective_hamiltonian(config, etas=[(0.0, 0.0)])
    assert estimate.bound_violations == 0
    assert -1.0 - 1e-9 <= estimate.estimate <= 1e-9
    assert math.isfinite(estimate.estimate)
