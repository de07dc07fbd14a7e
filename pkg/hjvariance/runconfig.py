"""
Run configuration document.

One JSON document describes a run. Every section rejects unknown keys so a
typo fails validation instead of silently running with defaults.
"""

import hashlib
import json
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import settings
from .hjb_solver import KineticCost, Payoff, SolverParams


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class EnvironmentSettings(_Section):
    dimension: int = Field(default=settings.DIMENSION, ge=2)
    alpha: float = Field(default=settings.ALPHA, ge=0.0, le=1.0)
    a: float = settings.LEVEL_LOW
    b: float = settings.LEVEL_HIGH
    seed: int = Field(default=settings.ENVIRONMENT_SEED, ge=0, lt=2**64)
    margin: int = Field(default=settings.BOX_MARGIN, ge=0)

    @model_validator(mode="after")
    def _ordered_levels(self) -> "EnvironmentSettings":
        if not self.a < self.b:
            raise ValueError(f"levels must satisfy a < b, got a={self.a}, b={self.b}")
        return self

    @property
    def levels(self) -> Tuple[float, float]:
        return (self.a, self.b)


def _ascending(values: Sequence[float], name: str) -> None:
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(v <= 0 for v in values) or list(values) != sorted(set(values)):
        raise ValueError(f"{name} must be positive and strictly increasing")


class CampaignConfig(_Section):
    horizons: List[float] = Field(default_factory=lambda: list(settings.HORIZONS))
    samples: int = Field(default=settings.SAMPLES, ge=2)
    base_seed: int = Field(default=settings.BASE_SEED, ge=0, lt=2**64)
    zeta: float = Field(default=settings.SHIFT_EXPONENT, gt=0.0, lt=0.5)
    influence_survey: bool = False
    shift_averaging: bool = False
    influence_samples: int = Field(default=settings.INFLUENCE_SAMPLES, ge=2)
    bootstrap_resamples: int = Field(default=settings.BOOTSTRAP_RESAMPLES, ge=100)
    budget_seconds: float = Field(default=settings.BUDGET_SECONDS, gt=0.0)
    hamiltonian_etas: List[Tuple[float, ...]] = Field(default_factory=list)

    @field_validator("horizons")
    @classmethod
    def _horizons(cls, horizons: List[float]) -> List[float]:
        _ascending(horizons, "horizons")
        return horizons


class InfluenceSettings(_Section):
    delta: Optional[float] = Field(default=None, gt=0.0)
    path_limit: int = Field(default=settings.PATH_LIMIT, ge=1)
    tube_radius: int = Field(default=settings.TUBE_RADIUS, ge=0)
    site_limit: int = Field(default=settings.SCAN_SITE_LIMIT, ge=1)
    site_radius: Optional[int] = Field(default=None, ge=0)
    refine: bool = True


class FppSettings(_Section):
    alpha: float = Field(default=settings.ALPHA, ge=0.0, le=1.0)
    a: float = Field(default=settings.FPP_LEVEL_LOW, gt=0.0)
    b: float = settings.FPP_LEVEL_HIGH
    lengths: List[int] = Field(default_factory=lambda: list(settings.FPP_LENGTHS))
    samples: int = Field(default=settings.SAMPLES, ge=2)
    base_seed: int = Field(default=settings.BASE_SEED, ge=0, lt=2**64)
    bootstrap_resamples: int = Field(default=settings.BOOTSTRAP_RESAMPLES, ge=100)

    @model_validator(mode="after")
    def _check(self) -> "FppSettings":
        if not self.a < self.b:
            raise ValueError(f"edge weights must satisfy 0 < a < b, got a={self.a}, b={self.b}")
        _ascending(self.lengths, "lengths")
        return self


class HashCheckSettings(_Section):
    sizes: List[int] = Field(default_factory=lambda: list(settings.HASH_SIZES))
    alpha: float = Field(default=settings.ALPHA, ge=0.0, le=1.0)
    random_flips: int = Field(default=settings.HASH_RANDOM_FLIPS, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("sizes")
    @classmethod
    def _sizes(cls, sizes: List[int]) -> List[int]:
        if any(m < 2 for m in sizes):
            raise ValueError("hash sizes must be at least 2")
        return sizes


def zeta_range(dimension: int, nondegeneracy_exponent: float) -> Tuple[float, float]:
    """Open interval of admissible shift exponents."""
    if dimension == 2:
        nu = nondegeneracy_exponent
        return ((nu - 1.0) / (2.0 * nu - 1.0), 0.5)
    return (1.0 / dimension, 0.5)


class RunConfig(_Section):
    environment: EnvironmentSettings = Field(default_factory=EnvironmentSettings)
    kinetic: KineticCost = Field(default_factory=KineticCost)
    payoff: Payoff = Field(default_factory=Payoff)
    solver: SolverParams = Field(default_factory=SolverParams)
    campaign: CampaignConfig = Field(default_factory=CampaignConfig)
    influence: InfluenceSettings = Field(default_factory=InfluenceSettings)
    fpp: FppSettings = Field(default_factory=FppSettings)
    hash_check: HashCheckSettings = Field(default_factory=HashCheckSettings)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        d = self.environment.dimension
        if len(self.solver.start) != d:
            raise ValueError(f"solver.start has {len(self.solver.start)} coordinates for dimension {d}")
        if self.payoff.kind == "linear" and len(self.payoff.eta) != d:
            raise ValueError(f"payoff.eta has {len(self.payoff.eta)} components for dimension {d}")
        for entry in self.payoff.entries:
            if len(entry.point) != d:
                raise ValueError(f"payoff entry {entry.point} does not match dimension {d}")
        for eta in self.campaign.hamiltonian_etas:
            if len(eta) != d:
                raise ValueError(f"campaign.hamiltonian_etas entry {eta} does not match dimension {d}")
        low, high = zeta_range(d, self.kinetic.nondegeneracy_exponent)
        if not low < self.campaign.zeta < high:
            raise ValueError(f"campaign.zeta must lie in ({low:.4f}, {high}) for dimension {d}")
        for t in self.campaign.horizons:
            if math.floor(t**self.campaign.zeta) < 2:
                raise ValueError(f"campaign horizon {t} gives shift block m = floor(t^zeta) < 2")
            self.solver.with_horizon(t)
        return self

    @property
    def delta(self) -> float:
        if self.influence.delta is not None:
            return self.influence.delta
        return settings.DELTA_FRACTION * (self.environment.b - self.environment.a)

    def with_payoff_slope(self, eta: Sequence[float]) -> "RunConfig":
        payoff = self.payoff.model_copy(update={"eta": tuple(float(v) for v in eta)})
        return self.model_copy(update={"payoff": payoff})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply ``key.path=value`` overrides to a raw configuration document.

    Values are parsed as JSON when possible and kept as strings otherwise.
    """
    result = json.loads(json.dumps(document))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ValueError(f"override '{item}' has an empty key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = result
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValueError(f"override '{item}': '{part}' is not a section")
            node = child
        node[parts[-1]] = value
    return result


def load_run_config(document: Dict[str, Any], overrides: Sequence[str] = ()) -> RunConfig:
    """Validate a document (or a manifest carrying one) after overrides."""
    if "config" in document and "config_hash" in document:
        document = document["config"]
    return RunConfig.model_validate(apply_overrides(document, overrides))
