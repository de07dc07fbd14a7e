# Output records for hjvariance
#
# Each record is a pydantic model so it can be written as JSON, JSON lines or
# a CSV row by the pipelines without hand-written serializers.

import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

Site = Tuple[int, ...]


class PathRecord(BaseModel):
    """A grid path with its independently re-evaluated cost decomposition."""

    model_config = ConfigDict(frozen=True)

    vertices: List[Tuple[float, ...]]
    dt: float
    step_kinetic: List[float]
    step_potential: List[float]
    total_cost: float
    payoff: float
    value: float
    slack: float = Field(ge=0.0)

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.vertices) - 1)

    @property
    def start(self) -> Tuple[float, ...]:
        return self.vertices[0]

    @property
    def end(self) -> Tuple[float, ...]:
        return self.vertices[-1]


class InfluenceRecord(BaseModel):
    site: Site
    high: bool
    omega: Optional[float] = None
    u: float
    sigma_u: float
    rho: float
    delta_weighted: float
    important: Optional[bool] = None
    very_important: Optional[bool] = None
    far_field: bool = False


class SiteClassification(BaseModel):
    site: Site
    high: bool
    visits: int
    important: bool
    very_important: bool


class ImportanceSurvey(BaseModel):
    env_seed: int
    horizon: float
    delta: float
    scan_radius: float
    path_count: int
    partial: bool
    sites: List[SiteClassification]
    important: List[Site]
    very_important: List[Site]
    box_size: int
    lambda_counts: List[Tuple[Site, int]]
    max_lambda: int
    displacement_event: bool
    limit_important: List[Site] = []
    refined_nested: Optional[bool] = None
    stable_under_refinement: Optional[bool] = None

    def classification(self, site: Site) -> Optional[SiteClassification]:
        for entry in self.sites:
            if entry.site == tuple(site):
                return entry
        return None


class HorizonStats(BaseModel):
    t: float
    samples: int
    mean: float
    variance: float
    ci_low: float
    ci_high: float


class GrowthFit(BaseModel):
    model: str
    coefficient: float
    exponent: Optional[float] = None
    exponent_ci: Optional[Tuple[float, float]] = None
    residual: float

    def predict(self, t: float) -> float:
        if self.model == "linear":
            return self.coefficient * t
        if self.model == "t_over_log_t":
            return self.coefficient * t / math.log(t)
        return self.coefficient * t**self.exponent


class GrowthReport(BaseModel):
    fits: List[GrowthFit]
    selected: str
    kappa: float
    kappa_ci: Tuple[float, float]

    def fit(self, model: str) -> GrowthFit:
        for entry in self.fits:
            if entry.model == model:
                return entry
        raise KeyError(model)


class VarianceCurve(BaseModel):
    label: str
    points: List[HorizonStats]
    growth: Optional[GrowthReport] = None

    @property
    def horizons(self) -> List[float]:
        return [p.t for p in self.points]

    @property
    def variances(self) -> List[float]:
        return [p.variance for p in self.points]


class SampleRow(BaseModel):
    t: float
    index: int
    seed: int
    u: float
    shifted_u: Optional[float] = None
    shift: Optional[Site] = None


class TalagrandReport(BaseModel):
    t: float
    variance: float
    site_sum: float
    c_fit: Optional[float]
    sites_surveyed: int
    samples_surveyed: int
    shift_sum: Optional[float] = None
    truncated: bool = False
    tube_radius: Optional[int] = None


class DecompositionReport(BaseModel):
    t: float
    variance: float
    shifted_variance: float
    max_shift_gap: float
    bound: float
    holds: bool


class TrendReport(BaseModel):
    ratios: List[Tuple[float, float]]
    violations: List[Tuple[float, float]]
    kappa_not_above_one: Optional[bool] = None

    @property
    def non_increasing(self) -> bool:
        return not self.violations


class BoundedTrend(BaseModel):
    """Slope of a per-horizon statistic against log t and whether growth is ruled in."""

    label: str
    horizons: List[float]
    values: List[float]
    slope: Optional[float] = None
    slope_low: Optional[float] = None
    bounded: Optional[bool] = None


class SurveySample(BaseModel):
    """Influence statistics of one surveyed environment."""

    important: int
    very_important: int
    displacement_event: bool
    partial: bool
    not_very_max_sq: float
    very_max_sq: float
    max_sq: float
    inclusion_violations: int = 0


class SurveyStats(BaseModel):
    """Influence statistics reduced over the surveyed environments of one horizon."""

    t: float
    samples: int
    partial_samples: int
    max_important: int
    max_very_important: int
    not_very_max_sq: float
    very_with_displacement: int
    very_with_displacement_frequency: float
    confinement_max_sq: float
    confinement_ratio: float
    inclusion_violations: int


class HamiltonianEstimate(BaseModel):
    eta: Tuple[float, ...]
    horizons: List[float]
    means: List[float]
    estimate: float
    extrapolated: Optional[float]
    reference: Optional[float] = None
    bound_violations: int = 0


class ShiftCloseness(BaseModel):
    t: float
    m: int
    samples: int
    max_gap: float
    mean_gap: float
    ratio: float


class HashDiagnostics(BaseModel):
    m: int
    alpha: float
    max_probability: float
    bound: float
    within_bound: bool
    lipschitz_checked: int
    lipschitz_violations: int
    range_ok: bool
    distribution: List[float]


class Manifest(BaseModel):
    command: str
    status: str
    config: Dict[str, object]
    config_hash: str
    overrides: List[str] = []
    versions: Dict[str, str]
    timings: Dict[str, float]
    artifacts: List[str] = []
    partial: bool = False
    error: Optional[str] = None
