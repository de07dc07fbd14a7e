"""
Monte Carlo variance campaigns.

Samples u(t) over independent environments for a list of horizons, reduces
the samples in seed order, bootstraps variance confidence intervals and fits
the growth law of var u(t) in log space.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import settings
from .env_lattice import Box, sample_environment
from .exceptions import ConfigError, DegenerateDataError
from .hjb_solver import SolverParams, resolve_stencil, solve_value, solver_box
from .influence_lab import (
    ShiftHash,
    classify_importance,
    influence_sites,
    survey_sites,
    survey_statistics,
    talagrand_sum,
    value_under_shift,
)
from .items import (
    BoundedTrend,
    DecompositionReport,
    GrowthFit,
    GrowthReport,
    HamiltonianEstimate,
    HorizonStats,
    SampleRow,
    ShiftCloseness,
    SurveySample,
    SurveyStats,
    TalagrandReport,
    TrendReport,
    VarianceCurve,
)
from .runconfig import RunConfig
from .seeding import (
    STREAM_BOOTSTRAP,
    STREAM_ENVIRONMENT,
    STREAM_SHIFT,
    derive_seed,
    make_generator,
)

logger = logging.getLogger(__name__)

FIT_TIE_TOLERANCE = 1e-12


def unbiased_variance(values: Sequence[float]) -> float:
    """Sample variance (n - 1 denominator) on data shifted by its first value."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DegenerateDataError(f"variance needs at least two samples, got {x.size}")
    shifted = x - x[0]
    mean = math.fsum(shifted.tolist()) / x.size
    return math.fsum(((shifted - mean) ** 2).tolist()) / (x.size - 1)


def bootstrap_variance_ci(
    values: Sequence[float],
    resamples: int,
    seed: int,
    level: float = settings.CONFIDENCE_LEVEL,
) -> Tuple[float, float]:
    """Percentile bootstrap interval for the variance, widened to contain the estimate."""
    x = np.asarray(values, dtype=float)
    point = unbiased_variance(x)
    generator = make_generator(seed)
    estimates = []
    for start in range(0, resamples, settings.BOOTSTRAP_CHUNK):
        size = min(settings.BOOTSTRAP_CHUNK, resamples - start)
        picks = generator.integers(0, x.size, size=(size, x.size))
        estimates.append(np.var(x[picks], axis=1, ddof=1))
    low, high = np.quantile(np.concatenate(estimates), [(1 - level) / 2, (1 + level) / 2])
    return min(float(low), point), max(float(high), point)


def summarize_horizon(t: float, values: Sequence[float], resamples: int, seed: int) -> HorizonStats:
    x = np.asarray(values, dtype=float)
    low, high = bootstrap_variance_ci(x, resamples, seed)
    return HorizonStats(
        t=t,
        samples=int(x.size),
        mean=math.fsum(x.tolist()) / x.size,
        variance=unbiased_variance(x),
        ci_low=low,
        ci_high=high,
    )


def fit_growth(
    horizons: Sequence[float],
    variances: Sequence[float],
    level: float = settings.CONFIDENCE_LEVEL,
) -> GrowthReport:
    """
    Least-squares fits of c*t, c*t/log t and c*t^kappa in log space.

    Args:
        horizons: At least three horizons, all above 1
        variances: Positive variance estimates
        level: Confidence level of the kappa interval

    Returns:
        GrowthReport; the selected model has the smallest residual, ties
        going to the model with fewer parameters
    """
    t = np.asarray(horizons, dtype=float)
    v = np.asarray(variances, dtype=float)
    if t.size < 3 or t.size != v.size:
        raise DegenerateDataError(f"growth fits need at least three horizons, got {t.size}")
    if np.any(v <= 0.0):
        raise DegenerateDataError("growth fits need positive variances (zero-variance input)")
    if np.any(t <= 1.0):
        raise DegenerateDataError("growth fits need horizons above 1")
    log_t = np.log(t)
    log_v = np.log(v)

    fits: List[GrowthFit] = []
    for model, basis, exponent in (
        ("linear", log_t, 1.0),
        ("t_over_log_t", log_t - np.log(log_t), None),
    ):
        log_c = float(np.mean(log_v - basis))
        residual = float(np.sum((log_v - basis - log_c) ** 2))
        fits.append(GrowthFit(model=model, coefficient=math.exp(log_c), exponent=exponent, residual=residual))

    design = np.column_stack([np.ones_like(log_t), log_t])
    coef, *_ = np.linalg.lstsq(design, log_v, rcond=None)
    residual = float(np.sum((log_v - design @ coef) ** 2))
    kappa = float(coef[1])
    dof = t.size - 2
    spread = float(np.sum((log_t - log_t.mean()) ** 2))
    stderr = math.sqrt(residual / dof / spread)
    quantile = float(stats.t.ppf((1 + level) / 2, dof))
    kappa_ci = (kappa - quantile * stderr, kappa + quantile * stderr)
    fits.append(
        GrowthFit(
            model="power",
            coefficient=math.exp(float(coef[0])),
            exponent=kappa,
            exponent_ci=kappa_ci,
            residual=residual,
        )
    )

    best = min(f.residual for f in fits)
    selected = next(f.model for f in fits if f.residual <= best + FIT_TIE_TOLERANCE)
    return GrowthReport(fits=fits, selected=selected, kappa=kappa, kappa_ci=kappa_ci)


def ratio_trend(curve: VarianceCurve) -> TrendReport:
    """var(t)/t across horizons; a step up beyond both confidence intervals is a violation."""
    points = curve.points
    ratios = [(p.t, p.variance / p.t) for p in points]
    violations = [
        (nxt.t, nxt.variance / nxt.t)
        for prev, nxt in zip(points[:-1], points[1:])
        if nxt.ci_low / nxt.t > prev.ci_high / prev.t
    ]
    kappa_ok = None if curve.growth is None else curve.growth.kappa_ci[1] <= 1.0
    return TrendReport(ratios=ratios, violations=violations, kappa_not_above_one=kappa_ok)


def growth_trend(
    label: str,
    horizons: Sequence[float],
    values: Sequence[float],
    level: float = settings.CONFIDENCE_LEVEL,
) -> BoundedTrend:
    """
    Least-squares slope of a per-horizon statistic against log t.

    The statistic counts as bounded unless the one-sided lower confidence
    bound of the slope exceeds the value tolerance. Fewer than three
    horizons give no verdict.
    """
    t = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size != v.size:
        raise DegenerateDataError(f"'{label}' has {v.size} values for {t.size} horizons")
    trend = BoundedTrend(label=label, horizons=t.tolist(), values=v.tolist())
    if t.size < 3:
        return trend
    fit = stats.linregress(np.log(t), v)
    low = float(fit.slope - stats.t.ppf(level, t.size - 2) * fit.stderr)
    return trend.model_copy(
        update={"slope": float(fit.slope), "slope_low": low, "bounded": low <= settings.VALUE_TOLERANCE}
    )


def run_shift_closeness(rows: Sequence[SampleRow], zeta: float) -> List[ShiftCloseness]:
    """max |u - u~| / t^zeta per horizon over rows carrying a shifted value."""
    by_horizon: Dict[float, List[float]] = {}
    for row in rows:
        if row.shifted_u is not None:
            by_horizon.setdefault(row.t, []).append(abs(row.u - row.shifted_u))
    report = []
    for t, gaps in sorted(by_horizon.items()):
        worst = max(gaps)
        report.append(
            ShiftCloseness(
                t=t,
                m=int(math.floor(t**zeta)),
                samples=len(gaps),
                max_gap=worst,
                mean_gap=math.fsum(gaps) / len(gaps),
                ratio=worst / t**zeta,
            )
        )
    return report


def campaign_box(params: SolverParams, q_max: int, margin: int, shift_block: int) -> Box:
    """Solver box plus room for shifts in [0, m-1]^d."""
    box = solver_box(params, q_max, margin)
    return tuple((lo, hi + shift_block - 1) for lo, hi in box)


@dataclass(frozen=True)
class SampleTask:
    config: RunConfig
    t: float
    index: int
    survey: bool


@dataclass
class SampleOutcome:
    row: SampleRow
    rho: Dict[Tuple[int, ...], float] = field(default_factory=dict)
    shift_rho: List[Tuple[float, float]] = field(default_factory=list)
    shift_bits: Optional[np.ndarray] = None
    tube_radius: Optional[int] = None
    survey: Optional[SurveySample] = None


def run_sample(task: SampleTask) -> SampleOutcome:
    """One environment draw at one horizon; module level so worker processes can pickle it."""
    cfg = task.config
    env_cfg = cfg.environment
    params = cfg.solver.with_horizon(task.t)
    q_max = resolve_stencil(params, cfg.kinetic, cfg.payoff, env_cfg.b - env_cfg.a)
    shift_hash = ShiftHash.for_horizon(task.t, cfg.campaign.zeta, env_cfg.alpha)
    box = campaign_box(params, q_max, env_cfg.margin, shift_hash.m)
    seed = derive_seed(cfg.campaign.base_seed, STREAM_ENVIRONMENT, params.steps, task.index)
    env = sample_environment(box, env_cfg.alpha, env_cfg.levels, seed)
    table = solve_value(env, cfg.payoff, cfg.kinetic, params, store_layers=task.survey)
    outcome = SampleOutcome(row=SampleRow(t=task.t, index=task.index, seed=seed, u=table.value))

    if task.survey:
        sites, outcome.tube_radius = influence_sites(
            env, table, cfg.influence.site_limit, cfg.influence.tube_radius
        )
        survey = classify_importance(
            env,
            cfg.delta,
            cfg.payoff,
            cfg.kinetic,
            params,
            path_limit=cfg.influence.path_limit,
            zeta=cfg.campaign.zeta,
            refine=False,
            table=table,
        )
        records = survey_sites(env, sites, cfg.payoff, cfg.kinetic, params, table=table, survey=survey)
        outcome.rho = {r.site: r.rho for r in records}
        outcome.survey = survey_statistics(records, survey)

    if cfg.campaign.shift_averaging:
        generator = make_generator(derive_seed(cfg.campaign.base_seed, STREAM_SHIFT, params.steps, task.index))
        bits = shift_hash.sample_bits(generator, env.dimension)
        z = shift_hash.shift(bits)
        shifted = value_under_shift(env, z, cfg.payoff, cfg.kinetic, params)
        outcome.row = outcome.row.model_copy(update={"shifted_u": shifted, "shift": z})
        if task.survey:
            outcome.shift_bits = bits
            cache = {z: shifted}

            def moved(axis: int, count: int) -> float:
                target = list(z)
                target[axis] = shift_hash.tilde_from_count(count)
                target = tuple(target)
                if target not in cache:
                    cache[target] = value_under_shift(env, target, cfg.payoff, cfg.kinetic, params)
                return cache[target]

            for axis, row in enumerate(bits):
                count = int(row.sum())
                plus = (moved(axis, count + 1) - shifted) / 2 if count < shift_hash.block else 0.0
                minus = (moved(axis, count - 1) - shifted) / 2 if count > 0 else 0.0
                outcome.shift_rho.append((plus, minus))
    return outcome


def run_tasks(
    worker: Callable,
    tasks: Sequence,
    jobs: int,
    deadline: float,
) -> Tuple[List, bool]:
    """Run tasks in order, checking the deadline between chunks; returns (results, stopped early)."""
    results: List = []
    if jobs <= 1:
        for task in tasks:
            if time.monotonic() > deadline:
                return results, True
            results.append(worker(task))
        return results, False
    chunk = jobs * settings.WORKER_CHUNK_FACTOR
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for start in range(0, len(tasks), chunk):
            if time.monotonic() > deadline:
                return results, True
            results.extend(pool.map(worker, tasks[start : start + chunk]))
    return results, False


@dataclass
class CampaignResult:
    rows: List[SampleRow]
    curve: VarianceCurve
    shifted_curve: Optional[VarianceCurve] = None
    talagrand: List[TalagrandReport] = field(default_factory=list)
    decomposition: List[DecompositionReport] = field(default_factory=list)
    closeness: List[ShiftCloseness] = field(default_factory=list)
    survey_stats: List[SurveyStats] = field(default_factory=list)
    bounded: List[BoundedTrend] = field(default_factory=list)
    trend: Optional[TrendReport] = None
    partial: bool = False
    elapsed: float = 0.0


def attach_growth(curve: VarianceCurve) -> VarianceCurve:
    if len(curve.points) < 3 or any(p.variance <= 0.0 or p.t <= 1.0 for p in curve.points):
        logger.warning(f"Skipping growth fits for '{curve.label}': need three horizons with positive variance")
        return curve
    return curve.model_copy(update={"growth": fit_growth(curve.horizons, curve.variances)})


def _talagrand_report(t: float, variance: float, outcomes: List[SampleOutcome]) -> TalagrandReport:
    surveyed = [o for o in outcomes if o.rho or o.shift_bits is not None]
    sites = sorted({site for o in surveyed for site in o.rho})
    site_samples = {site: [o.rho.get(site, 0.0) for o in surveyed] for site in sites}
    site_sum = talagrand_sum(site_samples).total if len(surveyed) >= 2 else 0.0

    shift_sum = None
    with_bits = [o for o in surveyed if o.shift_bits is not None]
    if len(with_bits) >= 2:
        dimension, block = with_bits[0].shift_bits.shape
        bit_samples = {
            (axis, k): [o.shift_rho[axis][1] if o.shift_bits[axis, k] else o.shift_rho[axis][0] for o in with_bits]
            for axis in range(dimension)
            for k in range(block)
        }
        shift_sum = talagrand_sum(bit_samples).total
    radii = [o.tube_radius for o in surveyed if o.tube_radius is not None]
    return TalagrandReport(
        t=t,
        variance=variance,
        site_sum=site_sum,
        c_fit=variance / site_sum if site_sum > 0.0 else None,
        sites_surveyed=len(sites),
        samples_surveyed=len(surveyed),
        shift_sum=shift_sum,
        truncated=bool(radii),
        tube_radius=min(radii) if radii else None,
    )


def _survey_stats(t: float, outcomes: List[SampleOutcome]) -> Optional[SurveyStats]:
    samples = [o.survey for o in outcomes if o.survey is not None]
    if not samples:
        return None
    very_with_g = sum(1 for s in samples if s.very_important and s.displacement_event)
    confined = max((s.max_sq for s in samples if not s.displacement_event), default=0.0)
    return SurveyStats(
        t=t,
        samples=len(samples),
        partial_samples=sum(1 for s in samples if s.partial),
        max_important=max(s.important for s in samples),
        max_very_important=max(s.very_important for s in samples),
        not_very_max_sq=max(s.not_very_max_sq for s in samples),
        very_with_displacement=very_with_g,
        very_with_displacement_frequency=very_with_g / len(samples),
        confinement_max_sq=confined,
        confinement_ratio=confined / math.sqrt(t),
        inclusion_violations=sum(s.inclusion_violations for s in samples),
    )


def _bounded_trends(
    closeness: List[ShiftCloseness], talagrand: List[TalagrandReport], surveys: List[SurveyStats]
) -> List[BoundedTrend]:
    trends = []
    if closeness:
        trends.append(growth_trend("shift_closeness", [c.t for c in closeness], [c.ratio for c in closeness]))
    fitted = [r for r in talagrand if r.c_fit is not None]
    if fitted:
        trends.append(growth_trend("c_fit", [r.t for r in fitted], [r.c_fit for r in fitted]))
    if surveys:
        trends.append(
            growth_trend("not_very_important_max_sq", [s.t for s in surveys], [s.not_very_max_sq for s in surveys])
        )
    return trends


def run_campaign(config: RunConfig, jobs: int = 1, budget: Optional[float] = None) -> CampaignResult:
    """
    Sample u(t) for every configured horizon.

    Args:
        config: Validated run configuration
        jobs: Worker processes; results are reduced in sample order either way
        budget: Seconds before the campaign stops and flags itself partial

    Returns:
        CampaignResult with per-sample rows, the variance curve and the
        optional influence and shift reports
    """
    campaign = config.campaign
    started = time.monotonic()
    deadline = started + (campaign.budget_seconds if budget is None else budget)
    rows: List[SampleRow] = []
    points, shifted_points = [], []
    talagrand, decomposition, surveys = [], [], []
    partial = False

    for t in campaign.horizons:
        steps = config.solver.with_horizon(t).steps
        tasks = [
            SampleTask(config, t, i, campaign.influence_survey and i < campaign.influence_samples)
            for i in range(campaign.samples)
        ]
        logger.info(f"Horizon t={t}: sampling {len(tasks)} environments")
        outcomes, stopped = run_tasks(run_sample, tasks, jobs, deadline)
        if stopped:
            partial = True
            logger.warning(f"Budget exhausted at t={t} after {len(outcomes)} samples")
        if len(outcomes) < 2:
            break
        rows.extend(o.row for o in outcomes)
        values = [o.row.u for o in outcomes]
        boot_seed = derive_seed(campaign.base_seed, STREAM_BOOTSTRAP, steps, 0)
        stats_u = summarize_horizon(t, values, campaign.bootstrap_resamples, boot_seed)
        points.append(stats_u)
        logger.info(f"Horizon t={t}: mean={stats_u.mean:.6g} var={stats_u.variance:.6g}")

        if campaign.influence_survey:
            talagrand.append(_talagrand_report(t, stats_u.variance, outcomes))
            horizon_survey = _survey_stats(t, outcomes)
            if horizon_survey is not None:
                surveys.append(horizon_survey)

        if campaign.shift_averaging:
            shifted = [o.row.shifted_u for o in outcomes]
            boot_seed = derive_seed(campaign.base_seed, STREAM_BOOTSTRAP, steps, 1)
            stats_s = summarize_horizon(t, shifted, campaign.bootstrap_resamples, boot_seed)
            shifted_points.append(stats_s)
            gaps = np.abs(np.subtract(values, shifted))
            bound = 3.0 * stats_s.variance + 12.0 * float(gaps.max()) ** 2
            decomposition.append(
                DecompositionReport(
                    t=t,
                    variance=stats_u.variance,
                    shifted_variance=stats_s.variance,
                    max_shift_gap=float(gaps.max()),
                    bound=bound,
                    holds=stats_u.variance <= bound + settings.VALUE_TOLERANCE,
                )
            )
        if stopped:
            break

    if not points:
        raise DegenerateDataError("campaign finished without two samples at any horizon")
    curve = attach_growth(VarianceCurve(label="u", points=points))
    shifted_curve = VarianceCurve(label="shifted_u", points=shifted_points) if shifted_points else None
    closeness = run_shift_closeness(rows, campaign.zeta) if campaign.shift_averaging else []
    return CampaignResult(
        rows=rows,
        curve=curve,
        shifted_curve=shifted_curve,
        talagrand=talagrand,
        decomposition=decomposition,
        closeness=closeness,
        survey_stats=surveys,
        bounded=_bounded_trends(closeness, talagrand, surveys),
        trend=ratio_trend(curve),
        partial=partial,
        elapsed=time.monotonic() - started,
    )


def effective_hamiltonian(
    config: RunConfig,
    etas: Optional[Sequence[Sequence[float]]] = None,
    jobs: int = 1,
) -> List[HamiltonianEstimate]:
    """
    Estimate the limit of u(t)/t for linear payoffs over a grid of slopes.

    The largest-horizon mean is reported together with a Richardson
    extrapolation in 1/t from the two largest horizons.
    """
    if config.payoff.kind != "linear":
        raise ConfigError("effective Hamiltonian estimation needs a linear payoff")
    etas = [tuple(e) for e in (etas if etas is not None else config.campaign.hamiltonian_etas)]
    if not etas:
        raise ConfigError("no slopes given for effective Hamiltonian estimation")
    env_cfg = config.environment
    plain = config.campaign.model_copy(
        update={"influence_survey": False, "shift_averaging": False, "hamiltonian_etas": []}
    )
    estimates = []
    for eta in etas:
        cfg = config.with_payoff_slope(eta).model_copy(update={"campaign": plain})
        result = run_campaign(cfg, jobs=jobs)
        horizons = [p.t for p in result.curve.points]
        means = [p.mean / p.t for p in result.curve.points]
        extrapolated = None
        if len(means) >= 2:
            (t1, m1), (t2, m2) = zip(horizons[-2:], means[-2:])
            extrapolated = (t2 * m2 - t1 * m1) / (t2 - t1)
        reference = None
        if env_cfg.alpha in (0.0, 1.0):
            level = env_cfg.a if env_cfg.alpha == 1.0 else env_cfg.b
            reference = config.kinetic.conjugate(eta) - level
        violations = 0
        if not any(eta) and config.payoff.intercept == 0.0:
            tol = settings.VALUE_TOLERANCE
            violations = sum(
                1 for r in result.rows if not -env_cfg.b - tol <= r.u / r.t <= -env_cfg.a + tol
            )
        estimates.append(
            HamiltonianEstimate(
                eta=eta,
                horizons=horizons,
                means=means,
                estimate=means[-1],
                extrapolated=extrapolated,
                reference=reference,
                bound_violations=violations,
            )
        )
        logger.info(f"Effective Hamiltonian at eta={eta}: {means[-1]:.6g}")
    return estimates
