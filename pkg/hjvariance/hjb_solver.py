"""
Discrete-time dynamic programming for the random Hamilton-Jacobi value.

The value u(t, x0) = sup over paths of g(gamma(t)) - int [K(gamma') + V(gamma)]
is approximated on the lattice h*Z^d with time step dt by the Bellman
recursion

    W_0 = g,    W_{k+1}(x) = max_q  W_k(x + q*h) - dt*K(q*h/dt) - int_x^{x+qh} V

over the square stencil |q_i| <= q_max. Potential integrals along each move
are exact (axis-crossing traversal), precomputed once per move and per
residue class of the node modulo the unit lattice. Layer k is only filled on
the cone of nodes that can still reach the start in the remaining steps.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from scipy.optimize import brentq

from . import settings
from .env_lattice import (
    Box,
    Environment,
    SiteIndex,
    box_around,
    box_contains,
    cube_crossings,
    segment_potential_integral,
)
from .exceptions import (
    BoxTooSmallError,
    ConfigError,
    InstanceTooLargeError,
    SolverError,
)
from .items import PathRecord

logger = logging.getLogger(__name__)

Region = Tuple[Tuple[int, int], ...]


class KineticCost(BaseModel):
    """K(q) = scale * |q|**exponent, certified non-degenerate with nondegeneracy_exponent."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    exponent: float = Field(default=settings.KINETIC_EXPONENT, gt=1.0)
    scale: float = Field(default=settings.KINETIC_SCALE, gt=0.0)
    nondegeneracy_exponent: float = Field(default=settings.NONDEGENERACY_EXPONENT, gt=1.0)

    @model_validator(mode="after")
    def _check_nondegeneracy(self) -> "KineticCost":
        # K(z) >= |z|**nu on |z| <= 1/2
        gap = self.nondegeneracy_exponent - self.exponent
        needed = 0.5**gap if gap >= 0 else math.inf
        if gap < 0 or self.scale < needed * (1.0 - settings.NONDEGENERACY_RTOL):
            raise ValueError(
                f"K(z) >= |z|^{self.nondegeneracy_exponent} fails on |z| <= 1/2 "
                f"for scale {self.scale} and exponent {self.exponent}"
            )
        return self

    def radial(self, r):
        return self.scale * np.power(r, self.exponent)

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.radial(np.linalg.norm(q, axis=-1))

    def conjugate(self, p) -> float:
        """Legendre transform K*(p) = sup_q p.q - K(q)."""
        norm = float(np.linalg.norm(p))
        s = self.exponent
        return (s - 1.0) * self.scale * (norm / (self.scale * s)) ** (s / (s - 1.0))

    def optimal_velocity(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        norm = float(np.linalg.norm(p))
        if norm == 0.0:
            return np.zeros_like(p)
        speed = (norm / (self.scale * self.exponent)) ** (1.0 / (self.exponent - 1.0))
        return speed * p / norm


class PayoffEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    point: Tuple[float, ...]
    value: float


class Payoff(BaseModel):
    """Terminal payoff: linear eta.x + intercept, or a table with an unreachable default."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["linear", "tabulated"] = "linear"
    eta: Tuple[float, ...] = settings.PAYOFF_SLOPE
    intercept: float = 0.0
    entries: Tuple[PayoffEntry, ...] = ()
    fill_value: Optional[float] = None
    growth: Optional[float] = Field(default=None, gt=0.0)

    _lookup: Dict[Tuple[float, ...], float] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_values(self) -> "Payoff":
        for entry in self.entries:
            if math.isnan(entry.value) or entry.value == math.inf:
                raise ValueError(f"payoff entry at {entry.point} must be finite or -inf")
        if self.kind == "tabulated" and not self.entries:
            raise ValueError("tabulated payoff needs at least one entry")
        return self

    def model_post_init(self, __context) -> None:
        self._lookup = {_key(e.point): e.value for e in self.entries}

    @property
    def unreachable(self) -> float:
        return -math.inf if self.fill_value is None else self.fill_value

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind == "linear":
            return points @ np.asarray(self.eta, dtype=float) + self.intercept
        flat = points.reshape(-1, points.shape[-1])
        out = np.array([self._lookup.get(_key(row), self.unreachable) for row in flat])
        return out.reshape(points.shape[:-1])

    def value_at(self, point: Sequence[float]) -> float:
        return float(self.evaluate(np.asarray(point, dtype=float)))

    def growth_constant(self, origin: Sequence[float]) -> float:
        """C1 with g(y) < g(x0) + C1 (1 + |y - x0|)."""
        if self.growth is not None:
            return self.growth
        if self.kind == "linear":
            slope = float(np.linalg.norm(self.eta))
            return slope if slope > 0.0 else settings.MIN_GROWTH_CONSTANT
        base = self.value_at(origin)
        if not math.isfinite(base):
            raise ConfigError(f"tabulated payoff must be finite at the start point {tuple(origin)}")
        ratios = [
            (e.value - base) / (1.0 + float(np.linalg.norm(np.subtract(e.point, origin))))
            for e in self.entries
            if math.isfinite(e.value)
        ]
        return max([0.0] + ratios) + settings.MIN_GROWTH_CONSTANT


def _key(point) -> Tuple[float, ...]:
    return tuple(round(float(c), 9) for c in point)


class SolverParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(default=settings.TIME_STEP, gt=0.0)
    h: float = Field(default=settings.GRID_SPACING, gt=0.0, le=1.0)
    q_max: Optional[int] = Field(default=None, ge=1)
    horizon: float = Field(default=settings.HORIZON, gt=0.0)
    start: Tuple[float, ...] = settings.START

    @field_validator("h")
    @classmethod
    def _unit_fraction(cls, h: float) -> float:
        n = round(1.0 / h)
        if abs(1.0 / h - n) > 1e-9:
            raise ValueError(f"grid spacing must be 1/n for an integer n, got {h}")
        return h

    @model_validator(mode="after")
    def _check_lattice(self) -> "SolverParams":
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        for c in self.start:
            scaled = c * self.refinement
            if abs(scaled - round(scaled)) > 1e-9:
                raise ValueError(f"start {self.start} is not on the lattice of spacing {self.h}")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def refinement(self) -> int:
        return int(round(1.0 / self.h))

    @property
    def dimension(self) -> int:
        return len(self.start)

    def with_horizon(self, horizon: float) -> "SolverParams":
        return self.model_validate({**self.model_dump(), "horizon": horizon})


@dataclass(frozen=True)
class SpeedBounds:
    """Constants of the finite-speed argument; R = r2."""

    r0: float
    r1: float
    r2: float

    @property
    def radius(self) -> float:
        return self.r2


def _first_root(fn, lower: float = 0.0) -> float:
    upper = max(1.0, 2.0 * lower)
    while fn(upper) <= 0.0:
        upper *= 2.0
    return brentq(fn, lower, upper, xtol=1e-12)


def finite_speed_bounds(kinetic: KineticCost, growth: float, spread: float) -> SpeedBounds:
    """
    Build the speed constants for optimizers with slack at most one.

    Args:
        kinetic: Kinetic cost
        growth: Payoff growth constant C1
        spread: b - a

    Returns:
        SpeedBounds with |gamma(t2) - gamma(t1)| <= r2 (1 + |t2 - t1|)
    """
    k = kinetic.radial
    r0 = _first_root(lambda r: k(r) - growth * r - (1.0 + spread + growth))
    target = 3.0 * (1.0 + spread + k(r0))
    r1 = max(_first_root(lambda r: k(r) - target), r0) * (1.0 + 1e-9)
    reserve = 4.0 * spread + k(2.0 * r1)
    lo, hi = settings.SPEED_TIME_STEP_RANGE
    sigmas = (np.linspace(lo, hi, 51) + 1.0) / np.linspace(lo, hi, 51)

    def convexity_gap(r: float) -> float:
        return float(np.min(k(sigmas * r) - sigmas * k(r)))

    r2 = max(3.0 * _first_root(lambda r: convexity_gap(r) - (reserve + 1.0)), r1) * (1.0 + 1e-9)
    return SpeedBounds(r0=float(r0), r1=float(r1), r2=float(r2))


def resolve_stencil(params: SolverParams, kinetic: KineticCost, payoff: Payoff, spread: float) -> int:
    """Stencil radius in grid units: explicit q_max, or ceil(r0*dt/h) + 1."""
    bounds = finite_speed_bounds(kinetic, payoff.growth_constant(params.start), spread)
    reach = bounds.r0 * params.dt / params.h
    if params.q_max is not None:
        if params.q_max < reach:
            logger.debug(f"Stencil {params.q_max} is below the global speed radius {reach:.3f}")
        return params.q_max
    return int(math.ceil(reach)) + 1


def stencil_moves(q_max: int, dimension: int) -> np.ndarray:
    """All moves of the square stencil in lexicographic order."""
    span = range(-q_max, q_max + 1)
    return np.array(list(itertools.product(span, repeat=dimension)), dtype=np.int64)


@dataclass(frozen=True)
class SolverGrid:
    """Nodes p in [0, 2N]^d with lattice index origin - N + p (units of h)."""

    dimension: int
    refinement: int
    origin: Tuple[int, ...]
    half_width: int
    q_max: int

    @classmethod
    def build(cls, params: SolverParams, q_max: int) -> "SolverGrid":
        n = params.refinement
        origin = tuple(int(round(c * n)) for c in params.start)
        return cls(len(origin), n, origin, params.steps * q_max, q_max)

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.size,) * self.dimension

    @property
    def center(self) -> Tuple[int, ...]:
        return (self.half_width,) * self.dimension

    def lattice_index(self, node: Sequence[int]) -> Tuple[int, ...]:
        return tuple(o - self.half_width + int(p) for o, p in zip(self.origin, node))

    def coordinate(self, node: Sequence[int]) -> Tuple[float, ...]:
        return tuple(i / self.refinement for i in self.lattice_index(node))

    def coordinates(self) -> np.ndarray:
        idx = np.indices(self.shape)
        base = np.array(self.origin).reshape((-1,) + (1,) * self.dimension) - self.half_width
        return np.moveaxis((idx + base) / self.refinement, 0, -1)

    def contains(self, node: Sequence[int]) -> bool:
        return all(0 <= p < self.size for p in node)

    def cone(self, remaining: int) -> Region:
        """Nodes able to reach the start in ``remaining`` steps."""
        radius = remaining * self.q_max
        return tuple((self.half_width - radius, self.half_width + radius + 1) for _ in range(self.dimension))

    def full(self) -> Region:
        return tuple((0, self.size) for _ in range(self.dimension))


def _slices(region: Region) -> Tuple[slice, ...]:
    return tuple(slice(start, stop) for start, stop in region)


def solver_box(params: SolverParams, q_max: int, margin: int = 0) -> Box:
    """Sites the solver reads: grid half-width plus one stencil around the start."""
    radius = (params.steps * q_max + q_max) * params.h
    return box_around(params.start, radius, margin)


@lru_cache(maxsize=None)
def _segment_template(residue: Tuple[int, ...], move: Tuple[int, ...], refinement: int):
    start = np.array(residue, dtype=float) / refinement
    end = (np.array(residue) + np.array(move)) / refinement
    return tuple(cube_crossings(start, end))


def _potential_tables(
    env: Environment,
    grid: SolverGrid,
    moves: np.ndarray,
    dt: float,
    region: Region,
) -> np.ndarray:
    """Exact potential integral of every move from every node of a region."""
    n = grid.refinement
    shape = tuple(stop - start for start, stop in region)
    tables = np.zeros((len(moves),) + shape)
    values = env.values
    lower = env.lower
    residues = list(itertools.product(range(n), repeat=grid.dimension))

    for residue in residues:
        targets, bases, counts = [], [], []
        for axis, (start, stop) in enumerate(region):
            first_index = grid.origin[axis] - grid.half_width + start
            first = start + (residue[axis] - first_index) % n
            count = len(range(first, stop, n))
            targets.append(slice(first - start, stop - start, n))
            bases.append((grid.origin[axis] - grid.half_width + first - residue[axis]) // n)
            counts.append(count)
        if min(counts) == 0:
            continue
        for m, move in enumerate(moves):
            for offset, fraction in _segment_template(residue, tuple(int(v) for v in move), n):
                picks = []
                for axis in range(grid.dimension):
                    lo = bases[axis] + offset[axis] - int(lower[axis])
                    hi = lo + counts[axis]
                    if lo < 0 or hi > env.shape[axis]:
                        raise BoxTooSmallError(
                            f"environment box {env.box} does not cover the solver grid; "
                            f"sample at least {solver_box_hint(grid)}"
                        )
                    picks.append(slice(lo, hi))
                tables[(m,) + tuple(targets)] += (fraction * dt) * values[tuple(picks)]
    return tables


def solver_box_hint(grid: SolverGrid) -> Box:
    radius = (grid.half_width + grid.q_max) / grid.refinement
    return box_around([o / grid.refinement for o in grid.origin], radius)


def _bellman_step(
    previous: np.ndarray,
    potential: np.ndarray,
    kinetic_costs: np.ndarray,
    moves: np.ndarray,
    q_max: int,
    region: Region,
) -> Tuple[np.ndarray, np.ndarray]:
    padded = np.pad(previous, q_max, constant_values=-np.inf)
    shape = tuple(stop - start for start, stop in region)
    best = np.full(shape, -np.inf)
    links = np.full(shape, -1, dtype=np.int32)
    for m, move in enumerate(moves):
        view = padded[
            tuple(slice(start + q_max + q, stop + q_max + q) for (start, stop), q in zip(region, move))
        ]
        candidate = view - kinetic_costs[m] - potential[m]
        # strict comparison keeps the lexicographically smallest maximizer
        better = candidate > best
        best[better] = candidate[better]
        links[better] = m
    return best, links


@dataclass
class ValueTable:
    """Value layers indexed by remaining steps; layers[steps] holds u at the start."""

    grid: SolverGrid
    params: SolverParams
    kinetic: KineticCost
    payoff: Payoff
    moves: np.ndarray
    kinetic_costs: np.ndarray
    potential: Optional[np.ndarray]
    layers: List[np.ndarray]
    links: List[Optional[np.ndarray]]
    value: float
    env_box: Box
    env_seed: int

    @property
    def steps(self) -> int:
        return self.params.steps

    @property
    def has_layers(self) -> bool:
        return len(self.layers) == self.steps + 1

    def vertices(self, move_indices: Sequence[int]) -> List[Tuple[float, ...]]:
        node = np.array(self.grid.center)
        out = [self.grid.coordinate(node)]
        for m in move_indices:
            node = node + self.moves[m]
            out.append(self.grid.coordinate(node))
        return out


def solve_value(
    env: Environment,
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    store_layers: bool = True,
) -> ValueTable:
    """
    Run the backward recursion from the payoff to the start point.

    Args:
        env: Sampled environment covering solver_box(params, q_max)
        payoff: Terminal payoff
        kinetic: Kinetic cost
        params: Time step, grid spacing, stencil, horizon and start
        store_layers: Keep every layer, back-link and potential table

    Returns:
        ValueTable with value u(t, start)
    """
    if env.dimension != params.dimension:
        raise ConfigError(f"start {params.start} does not match environment dimension {env.dimension}")
    q_max = resolve_stencil(params, kinetic, payoff, env.spread)
    grid = SolverGrid.build(params, q_max)
    required = solver_box(params, q_max)
    if not box_contains(env.box, required):
        raise BoxTooSmallError(f"environment box {env.box} must contain {required}")

    moves = stencil_moves(q_max, grid.dimension)
    kinetic_costs = params.dt * kinetic(moves / grid.refinement / params.dt)
    potential = _potential_tables(env, grid, moves, params.dt, grid.full())

    layer = payoff.evaluate(grid.coordinates())
    layers: List[np.ndarray] = [layer]
    links: List[Optional[np.ndarray]] = [None]
    for k in range(1, params.steps + 1):
        region = grid.cone(params.steps - k)
        window = _slices(region)
        best, link = _bellman_step(
            layer, potential[(slice(None),) + window], kinetic_costs, moves, q_max, region
        )
        layer = np.full(grid.shape, -np.inf)
        layer[window] = best
        if store_layers:
            full_links = np.full(grid.shape, -1, dtype=np.int32)
            full_links[window] = link
            layers.append(layer)
            links.append(full_links)

    value = float(layer[grid.center])
    if not math.isfinite(value):
        raise SolverError(f"payoff is unreachable from {params.start} within horizon {params.horizon}")
    if not store_layers:
        layers, links, potential = [layer], [None], None
    logger.debug(f"Solved u={value!r} at t={params.horizon} on {grid.size}^{grid.dimension} nodes")
    return ValueTable(
        grid=grid,
        params=params,
        kinetic=kinetic,
        payoff=payoff,
        moves=moves,
        kinetic_costs=kinetic_costs,
        potential=potential,
        layers=layers,
        links=links,
        value=value,
        env_box=env.box,
        env_seed=env.seed,
    )


def resolve_flipped(table: ValueTable, env: Environment, site: SiteIndex) -> float:
    """
    Value after the potential changed at a single site.

    Only nodes whose moves touch the cube, and their forward cone, are
    recomputed; everything else is read from the stored layers.
    """
    if not table.has_layers:
        raise SolverError("single-site re-solve needs a table solved with store_layers=True")
    grid = table.grid
    if not box_contains(env.box, solver_box(table.params, grid.q_max)):
        raise BoxTooSmallError(f"environment box {env.box} does not cover the stored table")
    q, n = grid.q_max, grid.refinement
    touched = []
    for axis, j in enumerate(site):
        base = grid.origin[axis] - grid.half_width
        touched.append((j * n - base - q, (j + 1) * n - base + q + 1))

    previous = table.layers[0]
    for k in range(1, table.steps + 1):
        grow = (k - 1) * q
        cone = grid.cone(table.steps - k)
        region = tuple(
            (max(lo - grow, c_lo), min(hi + grow, c_hi)) for (lo, hi), (c_lo, c_hi) in zip(touched, cone)
        )
        if any(stop <= start for start, stop in region):
            return table.value
        potential = _potential_tables(env, grid, table.moves, table.params.dt, region)
        best, _ = _bellman_step(previous, potential, table.kinetic_costs, table.moves, q, region)
        layer = table.layers[k].copy()
        layer[_slices(region)] = best
        previous = layer
    return float(previous[grid.center])


def _enumerate_chains(table: ValueTable, delta: float, limit: int) -> Tuple[List[Tuple[Tuple[int, ...], float]], bool]:
    """Move sequences with accumulated slack <= delta, and whether the cap cut the search."""
    grid = table.grid
    steps = table.steps
    if delta <= 0.0:
        node = np.array(grid.center)
        chain = []
        for k in range(steps, 0, -1):
            m = int(table.links[k][tuple(node)])
            if m < 0:
                raise SolverError(f"missing back-link at layer {k}, node {tuple(node)}")
            chain.append(m)
            node = node + table.moves[m]
        return [(tuple(chain), 0.0)], False

    tolerance = settings.VALUE_TOLERANCE
    chains: List[Tuple[Tuple[int, ...], float]] = []
    truncated = False

    def visit(k: int, node: Tuple[int, ...], slack: float, taken: List[int]) -> None:
        nonlocal truncated
        if truncated:
            return
        if k == 0:
            if len(chains) >= limit:
                truncated = True
                return
            chains.append((tuple(taken), slack))
            return
        here = table.layers[k][node]
        for m, move in enumerate(table.moves):
            nxt = tuple(int(p + s) for p, s in zip(node, move))
            if not grid.contains(nxt):
                continue
            candidate = table.layers[k - 1][nxt] - table.kinetic_costs[m] - table.potential[(m,) + node]
            increment = here - candidate
            if slack + increment <= delta + tolerance:
                taken.append(m)
                visit(k - 1, nxt, slack + max(increment, 0.0), taken)
                taken.pop()

    visit(steps, grid.center, 0.0, [])
    chains.sort(key=lambda item: (item[1], item[0]))
    return chains, truncated


def reevaluate_path(
    env: Environment,
    kinetic: KineticCost,
    payoff: Payoff,
    vertices: Sequence[Sequence[float]],
    dt: float,
    value: float,
) -> PathRecord:
    """Recompute a path's cost from scratch with compensated summation."""
    points = [tuple(float(c) for c in v) for v in vertices]
    step_kinetic, step_potential = [], []
    for x0, x1 in zip(points[:-1], points[1:]):
        velocity = np.subtract(x1, x0) / dt
        step_kinetic.append(float(dt * kinetic(velocity)))
        step_potential.append(segment_potential_integral(env, x0, x1, dt))
    total = math.fsum(step_kinetic + step_potential)
    end_value = payoff.value_at(points[-1])
    slack = value - (end_value - total)
    if slack < -settings.VALUE_TOLERANCE:
        raise SolverError(f"path beats the computed value by {-slack!r}")
    return PathRecord(
        vertices=points,
        dt=dt,
        step_kinetic=step_kinetic,
        step_potential=step_potential,
        total_cost=total,
        payoff=end_value,
        value=value,
        slack=max(slack, 0.0),
    )


def enumerate_chain_paths(
    table: ValueTable, env: Environment, delta: float, limit: int
) -> Tuple[List[PathRecord], bool]:
    chains, truncated = _enumerate_chains(table, delta, limit)
    paths = []
    for moves, _ in chains:
        record = reevaluate_path(
            env, table.kinetic, table.payoff, table.vertices(moves), table.params.dt, table.value
        )
        if record.slack > delta + settings.VALUE_TOLERANCE:
            raise SolverError(f"back-tracked path has slack {record.slack!r} above {delta!r}")
        paths.append(record)
    if truncated:
        logger.warning(f"Path enumeration at delta={delta} stopped at the cap of {limit} paths")
    return paths, truncated


def backtrack_paths(
    table: ValueTable,
    env: Environment,
    delta: float = 0.0,
    limit: int = settings.PATH_LIMIT,
) -> List[PathRecord]:
    """
    Paths achieving the value within delta.

    delta = 0 returns the back-link argmax chain; positive delta enumerates
    every chain whose accumulated slack stays within delta, up to ``limit``.
    """
    if delta < 0.0:
        raise ConfigError(f"delta must be non-negative, got {delta}")
    if delta > 0.0 and table.potential is None:
        raise SolverError("delta enumeration needs a table solved with store_layers=True")
    paths, _ = enumerate_chain_paths(table, env, delta, limit)
    return paths


def enumerate_paths(
    env: Environment,
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
) -> Iterator[Tuple[Tuple[int, ...], float]]:
    """Every stencil path from the start with its value g(end) - cost."""
    q_max = resolve_stencil(params, kinetic, payoff, env.spread)
    moves = stencil_moves(q_max, params.dimension)
    count = len(moves) ** params.steps
    if count > settings.BRUTE_FORCE_PATH_LIMIT:
        raise InstanceTooLargeError(f"{count} paths exceed the enumeration limit")
    n, dt = params.refinement, params.dt
    kinetic_costs = dt * kinetic(moves / n / dt)
    costs: Dict[Tuple[Tuple[int, ...], int], float] = {}

    def step_cost(node: Tuple[int, ...], m: int) -> float:
        key = (node, m)
        if key not in costs:
            x0 = np.array(node) / n
            x1 = (np.array(node) + moves[m]) / n
            costs[key] = float(kinetic_costs[m]) + segment_potential_integral(env, x0, x1, dt)
        return costs[key]

    def walk(node: Tuple[int, ...], depth: int, spent: float, taken: List[int]):
        if depth == params.steps:
            yield tuple(taken), payoff.value_at(np.array(node) / n) - spent
            return
        for m, move in enumerate(moves):
            nxt = tuple(int(a + b) for a, b in zip(node, move))
            taken.append(m)
            yield from walk(nxt, depth + 1, spent + step_cost(node, m), taken)
            taken.pop()

    start = tuple(int(round(c * n)) for c in params.start)
    yield from walk(start, 0, 0.0, [])


def brute_force_value(env: Environment, payoff: Payoff, kinetic: KineticCost, params: SolverParams) -> float:
    return max(value for _, value in enumerate_paths(env, payoff, kinetic, params))


def brute_force_paths(
    env: Environment,
    payoff: Payoff,
    kinetic: KineticCost,
    params: SolverParams,
    delta: float,
) -> List[Tuple[Tuple[int, ...], float]]:
    everything = list(enumerate_paths(env, payoff, kinetic, params))
    best = max(value for _, value in everything)
    return [(moves, value) for moves, value in everything if best - value <= delta + settings.VALUE_TOLERANCE]


def occupation_times(path: PathRecord) -> Dict[SiteIndex, float]:
    """Time spent in each cube along the path (pi_j), summing to the horizon."""
    times: Dict[SiteIndex, float] = {}
    for x0, x1 in zip(path.vertices[:-1], path.vertices[1:]):
        for cube, fraction in cube_crossings(x0, x1):
            times[cube] = times.get(cube, 0.0) + fraction * path.dt
    return times


def hopf_lax_reference(kinetic: KineticCost, eta: Sequence[float], level: float, horizon: float) -> float:
    """Closed form value for a constant potential and linear payoff."""
    return horizon * (kinetic.conjugate(eta) - level)


def hopf_lax_tolerance(kinetic: KineticCost, eta: Sequence[float], h: float, dt: float, horizon: float) -> float:
    """Bound on the velocity-rounding loss of the grid against the closed form."""
    dimension = len(eta)
    rounding = 0.5 * (h / dt) * math.sqrt(dimension)
    reach = float(np.linalg.norm(kinetic.optimal_velocity(eta))) + rounding
    s = kinetic.exponent
    curvature = kinetic.scale * s * (s - 1.0) * max(reach, rounding) ** (s - 2.0)
    return horizon * 0.5 * curvature * rounding**2


@dataclass
class CostBoundReport:
    windows: int
    lower_violations: int
    upper_violations: int
    continuum_violations: int
    max_discretization_excess: float


def _balanced_kinetic(displacement: Sequence[int], steps: int, kinetic: KineticCost, refinement: int, dt: float) -> float:
    split = []
    for d in displacement:
        base, extra = divmod(int(d), steps)
        split.append([base + (1 if i < extra else 0) for i in range(steps)])
    moves = np.array(split, dtype=float).T
    return math.fsum((dt * kinetic(moves / refinement / dt)).tolist())


def cost_bound_report(path: PathRecord, kinetic: KineticCost, levels: Tuple[float, float], h: float) -> CostBoundReport:
    """
    Check every window [r1, r2] of a path against the two-sided cost bounds.

    Lower: (r2-r1)(a + K(avg velocity)). Upper: (r2-r1) b plus the kinetic
    cost of the balanced lattice split of the window displacement, plus the
    path's slack. The continuum upper bound uses (r2-r1) K(avg velocity).
    """
    a, b = levels
    n = int(round(1.0 / h))
    dt = path.dt
    lattice = [tuple(int(round(c * n)) for c in v) for v in path.vertices]
    costs = [k + p for k, p in zip(path.step_kinetic, path.step_potential)]
    tol = settings.VALUE_TOLERANCE
    windows = lower = upper = continuum = 0
    excess_max = 0.0
    for r1 in range(len(costs)):
        for r2 in range(r1 + 1, len(costs) + 1):
            span = (r2 - r1) * dt
            window = math.fsum(costs[r1:r2])
            shift = np.subtract(lattice[r2], lattice[r1])
            average = float(kinetic(shift / n / span))
            balanced = _balanced_kinetic(shift, r2 - r1, kinetic, n, dt)
            windows += 1
            if window < span * (a + average) - tol:
                lower += 1
            if window > span * b + balanced + path.slack + tol:
                upper += 1
            if window > span * (b + average) + path.slack + tol:
                continuum += 1
            excess_max = max(excess_max, balanced - span * average)
    return CostBoundReport(windows, lower, upper, continuum, excess_max)


def finite_speed_violations(path: PathRecord, radius: float) -> int:
    """Pairs of path times violating |gamma(t2) - gamma(t1)| <= R (1 + |t2 - t1|)."""
    points = np.array(path.vertices)
    count = 0
    for i in range(len(points)):
        gaps = np.linalg.norm(points[i + 1 :] - points[i], axis=1)
        spans = path.dt * np.arange(1, len(points) - i)
        count += int(np.sum(gaps > radius * (1.0 + spans) + settings.VALUE_TOLERANCE))
    return count
