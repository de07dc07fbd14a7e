"""
Single-site influence experiments.

Flips one site, re-solves on the affected cone and records
rho_j u = (sigma_j u - u) / 2 together with the Delta_j u it controls.
Importance surveys classify sites from the set of delta-optimal paths.
The shift hash turns an auxiliary block of bits into a lattice shift whose
law is nearly uniform and which moves by at most one per bit flip.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binom

from . import settings
from .env_lattice import (
    Box,
    Environment,
    SiteIndex,
    flip_site,
    shift_environment,
    validate_levels,
)
from .exceptions import ConfigError
from .hjb_solver import (
    KineticCost,
    Payoff,
    SolverParams,
    ValueTable,
    backtrack_paths,
    enumerate_chain_paths,
    finite_speed_bounds,
    occupation_times,
    resolve_flipped,
    resolve_stencil,
    solve_value,
    solver_box,
)
from .items import (
    HashDiagnostics,
    ImportanceSurvey,
    InfluenceRecord,
    PathRecord,
    SiteClassification,
    SurveySample,
)

logger = logging.getLogger(__name__)


def comparison_constants(alpha: float) -> Tuple[float, float]:
    """(C', C'') with C'|rho_j u| <= |Delta_j u| <= C''|rho_j u|."""
    return min(2 * alpha, 2 * (1 - alpha)), max(2 * alpha, 2 * (1 - alpha))


def far_field_radius(env: Environment, payoff: Payoff, kinetic: KineticCost, params: SolverParams) -> float:
    bounds = finite_speed_bounds(kinetic, payoff.growth_constant(params.start), env.spread)
    return bounds.radius * params.horizon


def dependence_box(env: Environment, payoff: Payoff, kinetic: KineticCost, params: SolverParams) -> Box:
    """Sites the solver reads; flips outside this box leave u unchanged."""
    return solver_box(params, resolve_stencil(params, kinetic, payoff, env.spread))


def _in_box(box: Box, site: Sequence[int]) -> bool:
    return all(lo <= k < hi for k, (lo, hi) in zip(site, box))


def _start_cube(params: SolverParams) -> np.ndarray:
    return np.floor(np.asarray(params.start, dtype=float))


def flip_difference(
    env: Environment,
    site: Sequence[int],
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    table: Optional[ValueTable] = None,
    survey: Optional[ImportanceSurvey] = None,
) -> InfluenceRecord:
    """
    Effect of flipping one site on the value.

    Args:
        env: Environment the value is computed in
        site: Site index j
        payoff, kinetic, params: Solver inputs
        table: Stored-layer solution of env, reused when given
        survey: Importance survey whose flags are copied into the record

    Returns:
        InfluenceRecord with u, sigma_j u, rho_j u and Delta_j u; sites
        beyond R*t or outside the dependence box get rho = 0 without a
        re-solve and need not lie in the sampled box
    """
    site = tuple(int(k) for k in site)
    distance = float(np.linalg.norm(np.subtract(site, _start_cube(params))))
    far = distance > far_field_radius(env, payoff, kinetic, params) or not _in_box(
        dependence_box(env, payoff, kinetic, params), site
    )
    if table is None:
        table = solve_value(env, payoff, kinetic, params, store_layers=not far)
    u = table.value

    flags: Dict[str, Optional[bool]] = {"important": None, "very_important": None}
    if survey is not None:
        entry = survey.classification(site)
        flags = {
            "important": bool(entry and entry.important),
            "very_important": bool(entry and entry.very_important),
        }

    if far:
        sampled = env.contains(site)
        return InfluenceRecord(
            site=site,
            high=env.is_high(site) if sampled else False,
            omega=env.level(site) if sampled else None,
            u=u,
            sigma_u=u,
            rho=0.0,
            delta_weighted=0.0,
            far_field=True,
            **flags,
        )

    high = env.is_high(site)
    sigma_u = resolve_flipped(table, flip_site(env, site), site)
    difference = sigma_u - u
    weight = env.alpha if high else 1.0 - env.alpha
    return InfluenceRecord(
        site=site,
        high=high,
        omega=env.level(site),
        u=u,
        sigma_u=sigma_u,
        rho=difference / 2.0,
        delta_weighted=weight * difference,
        **flags,
    )


def visited_sites(path: PathRecord) -> frozenset:
    return frozenset(site for site, time in occupation_times(path).items() if time > 0.0)


def _important_sites(env: Environment, visits: List[frozenset]) -> frozenset:
    if not visits:
        return frozenset()
    common = frozenset.intersection(*visits)
    return frozenset(j for j in common if not env.is_high(j))


def lambda_counts(important: Sequence[SiteIndex], m: int) -> Dict[SiteIndex, int]:
    """Lambda_j: important sites k with j - k in [0, m-1]^d, for every j with a positive count."""
    counts: Dict[SiteIndex, int] = {}
    for k in important:
        for offset in itertools.product(range(m), repeat=len(k)):
            anchor = tuple(a + b for a, b in zip(k, offset))
            counts[anchor] = counts.get(anchor, 0) + 1
    return counts


def diagnose_displacement(paths: Sequence[PathRecord], horizon: float) -> bool:
    """True when every path ends at least t^(1/4) away from where it started."""
    if not paths:
        raise ConfigError("displacement diagnosis needs at least one path")
    threshold = horizon**settings.DISPLACEMENT_EXPONENT
    return all(float(np.linalg.norm(np.subtract(p.end, p.start))) >= threshold for p in paths)


def classify_importance(
    env: Environment,
    delta: float,
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    path_limit: int = settings.PATH_LIMIT,
    zeta: float = settings.SHIFT_EXPONENT,
    refine: bool = True,
    table: Optional[ValueTable] = None,
) -> ImportanceSurvey:
    """
    Classify the sites visited by delta-optimal paths.

    A site is important when it carries level a and every enumerated
    delta-path spends positive time in it; very important when in addition
    every other visited site carries level b. With ``refine`` the survey is
    repeated at delta/10 (nesting check) and at the value tolerance (the
    delta -> 0 classification).
    """
    if delta <= 0.0:
        raise ConfigError(f"survey delta must be positive, got {delta}")
    if table is None:
        table = solve_value(env, payoff, kinetic, params)
    paths, truncated = enumerate_chain_paths(table, env, delta, path_limit)
    visits = [visited_sites(p) for p in paths]
    union = frozenset().union(*visits)
    important = _important_sites(env, visits)
    very = {
        j for j in important if all(env.is_high(k) for k in union if k != j)
    }

    sites = [
        SiteClassification(
            site=j,
            high=env.is_high(j),
            visits=sum(1 for v in visits if j in v),
            important=j in important,
            very_important=j in very,
        )
        for j in sorted(union)
    ]
    m = max(int(math.floor(params.horizon**zeta)), 1)
    counts = lambda_counts(sorted(important), m)

    survey = ImportanceSurvey(
        env_seed=env.seed,
        horizon=params.horizon,
        delta=delta,
        scan_radius=far_field_radius(env, payoff, kinetic, params),
        path_count=len(paths),
        partial=truncated,
        sites=sites,
        important=sorted(important),
        very_important=sorted(very),
        box_size=m,
        lambda_counts=sorted(counts.items()),
        max_lambda=max(counts.values(), default=0),
        displacement_event=diagnose_displacement(paths, params.horizon),
    )
    if not refine:
        return survey

    fine_paths, fine_truncated = enumerate_chain_paths(
        table, env, delta / settings.REFINEMENT_FACTOR, path_limit
    )
    coarse_keys = {tuple(p.vertices) for p in paths}
    nested = all(tuple(p.vertices) in coarse_keys for p in fine_paths) if not truncated else None
    fine_important = _important_sites(env, [visited_sites(p) for p in fine_paths])
    limit_paths, limit_truncated = enumerate_chain_paths(table, env, settings.VALUE_TOLERANCE, path_limit)
    limit_important = _important_sites(env, [visited_sites(p) for p in limit_paths])
    return survey.model_copy(
        update={
            "refined_nested": nested,
            "stable_under_refinement": None if fine_truncated else fine_important == important,
            "limit_important": sorted(limit_important),
            "partial": truncated or fine_truncated or limit_truncated,
        }
    )


def tube_sites(env: Environment, paths: Sequence[PathRecord], radius: int) -> List[SiteIndex]:
    """Sites within Chebyshev distance ``radius`` of a cube visited by any path."""
    core = frozenset().union(*(visited_sites(p) for p in paths)) if paths else frozenset()
    found = set()
    for j in core:
        for offset in itertools.product(range(-radius, radius + 1), repeat=len(j)):
            site = tuple(a + b for a, b in zip(j, offset))
            if env.contains(site):
                found.add(site)
    return sorted(found)


def survey_sites(
    env: Environment,
    sites: Sequence[SiteIndex],
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    table: Optional[ValueTable] = None,
    survey: Optional[ImportanceSurvey] = None,
) -> List[InfluenceRecord]:
    if table is None:
        table = solve_value(env, payoff, kinetic, params)
    return [flip_difference(env, j, payoff, kinetic, params, table=table, survey=survey) for j in sites]


def influence_sites(
    env: Environment,
    table: ValueTable,
    site_limit: int,
    tube_radius: int = settings.TUBE_RADIUS,
) -> Tuple[List[SiteIndex], Optional[int]]:
    """
    Sites to flip for a complete influence scan.

    The whole dependence box when it holds at most ``site_limit`` sites.
    Otherwise a tube around the argmax paths, at least one stencil reach
    wide; the second item is then the tube radius (None for a full scan).
    """
    box = solver_box(table.params, table.grid.q_max)
    if math.prod(hi - lo for lo, hi in box) <= site_limit:
        return [tuple(s) for s in itertools.product(*(range(lo, hi) for lo, hi in box))], None
    radius = max(tube_radius, int(math.ceil(table.grid.q_max * table.params.h)))
    logger.debug(f"Dependence box {box} exceeds {site_limit} sites; scanning a tube of radius {radius}")
    return tube_sites(env, backtrack_paths(table, env, 0.0), radius), radius


def survey_statistics(records: Sequence[InfluenceRecord], survey: ImportanceSurvey) -> SurveySample:
    """
    Reduce one environment's flip records against its importance survey.

    Inclusion counts sites with u - sigma_j u > delta that the survey did
    not classify important; every delta-path avoiding such a site would
    bound the drop by delta, so a complete survey has none.
    """
    important = {tuple(j) for j in survey.important}
    very = {tuple(j) for j in survey.very_important}
    drops = {r.site: (r.u - r.sigma_u) ** 2 for r in records}
    violations = 0
    if not survey.partial:
        violations = sum(1 for r in records if r.u - r.sigma_u > survey.delta and r.site not in important)
    return SurveySample(
        important=len(important),
        very_important=len(very),
        displacement_event=survey.displacement_event,
        partial=survey.partial,
        not_very_max_sq=max((drops.get(j, 0.0) for j in important - very), default=0.0),
        very_max_sq=max((drops.get(j, 0.0) for j in very), default=0.0),
        max_sq=max(drops.values(), default=0.0),
        inclusion_violations=violations,
    )


@dataclass
class TalagrandSum:
    total: float
    terms: Dict[Hashable, float] = field(default_factory=dict)


def talagrand_sum(
    samples: Mapping[Hashable, Sequence[float]],
    weights: Optional[Sequence[float]] = None,
) -> TalagrandSum:
    """
    Sum of ||rho_j||_2^2 / (1 + log(||rho_j||_2 / ||rho_j||_1)).

    Norms are taken over the sample law: uniform over the samples, or the
    given probability weights. Sites whose samples are all zero contribute 0.
    """
    terms: Dict[Hashable, float] = {}
    for key, values in samples.items():
        rho = np.asarray(values, dtype=float)
        if rho.size < 2:
            raise ConfigError(f"site {key} needs at least two samples, got {rho.size}")
        w = np.full(rho.size, 1.0 / rho.size) if weights is None else np.asarray(weights, dtype=float)
        if w.size != rho.size:
            raise ConfigError(f"site {key} has {rho.size} samples for {w.size} weights")
        second = math.fsum((w * rho * rho).tolist())
        first = math.fsum((w * np.abs(rho)).tolist())
        if second == 0.0:
            terms[key] = 0.0
            continue
        terms[key] = second / (1.0 + math.log(math.sqrt(second) / first))
    return TalagrandSum(total=math.fsum(terms.values()), terms=terms)


@dataclass
class ExactInfluences:
    """Exact laws of rho_j f under the product measure on a few sites."""

    weights: np.ndarray
    values: np.ndarray
    rho: Dict[int, np.ndarray]

    @property
    def mean(self) -> float:
        return math.fsum((self.weights * self.values).tolist())

    @property
    def variance(self) -> float:
        centered = self.values - self.mean
        return math.fsum((self.weights * centered * centered).tolist())


def exact_influences(
    f: Callable[[np.ndarray], float],
    n_sites: int,
    alpha: float,
    levels: Sequence[float],
) -> ExactInfluences:
    """Enumerate all 2**n configurations of levels and the flips of f."""
    a, b = validate_levels(alpha, levels)
    if not 0 < n_sites <= settings.CYLINDER_SITE_LIMIT:
        raise ConfigError(f"exact enumeration handles 1..{settings.CYLINDER_SITE_LIMIT} sites")
    index = np.arange(2**n_sites)
    bits = (index[:, None] >> np.arange(n_sites)) & 1
    configs = np.where(bits == 1, b, a)
    weights = np.prod(np.where(bits == 1, 1.0 - alpha, alpha), axis=1)
    values = np.array([f(c) for c in configs], dtype=float)
    rho = {j: (values[index ^ (1 << j)] - values) / 2.0 for j in range(n_sites)}
    return ExactInfluences(weights=weights, values=values, rho=rho)


@dataclass(frozen=True)
class ShiftHash:
    """
    Tent-map hash of m*m bits to {0, ..., m-1}, one block per axis.

    S counts level-b bits; h~ = m-1 - |(S mod (2m-2)) - (m-1)|.
    """

    m: int
    alpha: float

    @classmethod
    def for_horizon(cls, horizon: float, zeta: float, alpha: float) -> "ShiftHash":
        return build_shift_hash(int(math.floor(horizon**zeta)), alpha)

    @property
    def block(self) -> int:
        return self.m * self.m

    def tilde_from_count(self, count: int) -> int:
        period = 2 * self.m - 2
        return self.m - 1 - abs((count % period) - (self.m - 1))

    def tilde(self, bits: Sequence[bool]) -> int:
        bits = np.asarray(bits, dtype=bool)
        if bits.size != self.block:
            raise ConfigError(f"hash block needs {self.block} bits, got {bits.size}")
        return self.tilde_from_count(int(bits.sum()))

    def shift(self, blocks: np.ndarray) -> Tuple[int, ...]:
        """h(omega_1) = sum_i h~(omega_1^i) e_i for blocks of shape (d, m*m)."""
        return tuple(self.tilde(row) for row in np.asarray(blocks, dtype=bool))

    def sample_bits(self, generator: np.random.Generator, dimension: int) -> np.ndarray:
        return generator.random((dimension, self.block)) >= self.alpha

    @cached_property
    def distribution(self) -> np.ndarray:
        counts = np.arange(self.block + 1)
        pmf = binom.pmf(counts, self.block, 1.0 - self.alpha)
        law = np.zeros(self.m)
        for s, p in zip(counts, pmf):
            law[self.tilde_from_count(int(s))] += p
        return law

    @property
    def max_probability(self) -> float:
        return float(self.distribution.max())


def build_shift_hash(m: int, alpha: float) -> ShiftHash:
    if m < 2:
        raise ConfigError(f"shift hash needs m >= 2, got {m}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return ShiftHash(m=m, alpha=float(alpha))


def check_shift_hash(shift_hash: ShiftHash, random_flips: int, generator: np.random.Generator) -> HashDiagnostics:
    """Distribution bound, Lipschitz property under single flips, and range."""
    m, block = shift_hash.m, shift_hash.block
    checked = violations = 0
    range_ok = True
    if m == 2:
        samples = [np.array(bits, dtype=bool) for bits in itertools.product([False, True], repeat=block)]
        flips = [(bits, k) for bits in samples for k in range(block)]
    else:
        draws = generator.random((random_flips, block)) >= shift_hash.alpha
        positions = generator.integers(0, block, size=random_flips)
        flips = list(zip(draws, positions.tolist()))
    for bits, k in flips:
        before = shift_hash.tilde(bits)
        flipped = bits.copy()
        flipped[k] = not flipped[k]
        after = shift_hash.tilde(flipped)
        range_ok &= 0 <= before < m and 0 <= after < m
        violations += int(abs(after - before) > 1)
        checked += 1
    bound = 3.0 / m
    return HashDiagnostics(
        m=m,
        alpha=shift_hash.alpha,
        max_probability=shift_hash.max_probability,
        bound=bound,
        within_bound=shift_hash.max_probability <= bound,
        lipschitz_checked=checked,
        lipschitz_violations=violations,
        range_ok=bool(range_ok),
        distribution=shift_hash.distribution.tolist(),
    )


def shift_window(params: SolverParams, q_max: int) -> Tuple[Tuple[int, int], ...]:
    return solver_box(params, q_max)


def shifted_value(
    env: Environment,
    blocks: np.ndarray,
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    shift_hash: ShiftHash,
) -> float:
    """u~ = u(tau_h omega) with h the hash of the auxiliary bits."""
    z = shift_hash.shift(blocks)
    return value_under_shift(env, z, payoff, kinetic, params)


def value_under_shift(
    env: Environment,
    z: Sequence[int],
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
) -> float:
    q_max = resolve_stencil(params, kinetic, payoff, env.spread)
    moved = shift_environment(env, z, window=shift_window(params, q_max))
    return solve_value(moved, payoff, kinetic, params, store_layers=False).value
