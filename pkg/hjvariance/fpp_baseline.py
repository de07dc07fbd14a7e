"""
First-passage percolation on Z^2 as a sanity baseline.

Edges of the nearest-neighbour lattice carry i.i.d. weights a (probability
alpha) or b, with 0 < a < b. Passage times are computed with Dijkstra and
checked against brute force on small boxes.
"""

import heapq
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import settings
from .env_lattice import (
    KIND_EDGES,
    Box,
    box_contains,
    read_container,
    validate_levels,
    write_container,
)
from .exceptions import (
    ConfigError,
    DegenerateDataError,
    DomainError,
    InstanceTooLargeError,
    InsufficientMarginError,
    SnapshotFormatError,
)
from .items import SampleRow, TrendReport, VarianceCurve
from .runconfig import FppSettings, RunConfig
from .seeding import STREAM_BOOTSTRAP, STREAM_FPP, derive_seed, make_generator
from .variance_suite import attach_growth, ratio_trend, run_tasks, summarize_horizon

logger = logging.getLogger(__name__)

Vertex = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class EdgeEnvironment:
    """
    Edge weights on the vertex box [lo0, hi0) x [lo1, hi1).

    horizontal[x, y] is the edge (x, y)-(x+1, y); vertical[x, y] is the edge
    (x, y)-(x, y+1), both offset by the box corner. True means weight b.
    """

    box: Box
    alpha: float
    a: float
    b: float
    seed: int
    horizontal: np.ndarray
    vertical: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.box[0][1] - self.box[0][0], self.box[1][1] - self.box[1][0])

    def contains(self, vertex: Sequence[int]) -> bool:
        return all(lo <= int(c) < hi for c, (lo, hi) in zip(vertex, self.box))

    def _edge_slot(self, u: Vertex, v: Vertex) -> Tuple[str, Tuple[int, int]]:
        if not (self.contains(u) and self.contains(v)):
            raise DomainError(f"edge {u}-{v} lies outside box {self.box}")
        (x0, y0), (x1, y1) = sorted((tuple(u), tuple(v)))
        lo0, lo1 = self.box[0][0], self.box[1][0]
        if y0 == y1 and x1 == x0 + 1:
            return "horizontal", (x0 - lo0, y0 - lo1)
        if x0 == x1 and y1 == y0 + 1:
            return "vertical", (x0 - lo0, y0 - lo1)
        raise DomainError(f"{u} and {v} are not lattice neighbours")

    def weight(self, u: Vertex, v: Vertex) -> float:
        kind, slot = self._edge_slot(u, v)
        return self.b if getattr(self, kind)[slot] else self.a

    def neighbours(self, vertex: Vertex) -> Iterator[Tuple[Vertex, float]]:
        x, y = vertex
        lo0, lo1 = self.box[0][0], self.box[1][0]
        nx, ny = self.shape
        i, j = x - lo0, y - lo1
        if i + 1 < nx:
            yield (x + 1, y), self.b if self.horizontal[i, j] else self.a
        if i > 0:
            yield (x - 1, y), self.b if self.horizontal[i - 1, j] else self.a
        if j + 1 < ny:
            yield (x, y + 1), self.b if self.vertical[i, j] else self.a
        if j > 0:
            yield (x, y - 1), self.b if self.vertical[i, j - 1] else self.a

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeEnvironment):
            return NotImplemented
        return (
            self.box == other.box
            and (self.alpha, self.a, self.b) == (other.alpha, other.a, other.b)
            and np.array_equal(self.horizontal, other.horizontal)
            and np.array_equal(self.vertical, other.vertical)
        )

    __hash__ = None


def _check_levels(alpha: float, levels: Sequence[float]) -> Tuple[float, float]:
    a, b = validate_levels(alpha, levels)
    if a <= 0.0:
        raise ConfigError(f"edge weights must be positive, got a={a}")
    return a, b


def sample_edge_environment(box: Sequence[Sequence[int]], alpha: float, levels: Sequence[float], seed: int) -> EdgeEnvironment:
    box = tuple((int(lo), int(hi)) for lo, hi in box)
    if len(box) != 2 or any(hi - lo < 2 for lo, hi in box):
        raise ConfigError(f"edge environments need a 2-d box at least two vertices wide, got {box}")
    a, b = _check_levels(alpha, levels)
    nx, ny = box[0][1] - box[0][0], box[1][1] - box[1][0]
    generator = make_generator(seed)
    horizontal = generator.random((nx - 1, ny)) >= alpha
    vertical = generator.random((nx, ny - 1)) >= alpha
    return EdgeEnvironment(box, float(alpha), a, b, int(seed), horizontal, vertical)


def flip_edge(env: EdgeEnvironment, u: Vertex, v: Vertex) -> EdgeEnvironment:
    kind, slot = env._edge_slot(u, v)
    field = getattr(env, kind).copy()
    field[slot] = not field[slot]
    return replace(env, **{kind: field})


def fpp_box(source: Vertex, target: Vertex, levels: Sequence[float]) -> Box:
    """Vertex box holding every path of length at most b * |target - source|_1 in edges of weight >= a."""
    a, b = levels
    length = abs(target[0] - source[0]) + abs(target[1] - source[1])
    margin = int(math.ceil((b / a - 1.0) * length / 2.0))
    return tuple(
        (min(s, t) - margin, max(s, t) + margin + 1) for s, t in zip(source, target)
    )


@dataclass
class FppResult:
    distance: float
    path: List[Vertex]


def fpp_distance(
    env: EdgeEnvironment,
    target: Sequence[int],
    source: Sequence[int] = (0, 0),
    check_margin: bool = True,
) -> FppResult:
    """
    Passage time d(source, target) by Dijkstra with early stop.

    Args:
        env: Edge environment
        target: Target vertex
        source: Source vertex
        check_margin: Require the box to hold every competitive path

    Returns:
        FppResult with the distance and the parent-chain path
    """
    source, target = tuple(int(c) for c in source), tuple(int(c) for c in target)
    if not (env.contains(source) and env.contains(target)):
        raise DomainError(f"endpoints {source}, {target} must lie in box {env.box}")
    if check_margin and not box_contains(env.box, fpp_box(source, target, (env.a, env.b))):
        raise InsufficientMarginError(
            f"box {env.box} must contain {fpp_box(source, target, (env.a, env.b))} for {source}->{target}"
        )
    dist: Dict[Vertex, float] = {source: 0.0}
    parent: Dict[Vertex, Vertex] = {}
    closed = set()
    queue = [(0.0, source)]
    while queue:
        du, u = heapq.heappop(queue)
        if u in closed:
            continue
        closed.add(u)
        if u == target:
            break
        for v, w in env.neighbours(u):
            if v in closed:
                continue
            nd = du + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                parent[v] = u
                heapq.heappush(queue, (nd, v))

    path = [target]
    while path[-1] != source:
        path.append(parent[path[-1]])
    path.reverse()
    logger.debug(f"Dijkstra settled {len(closed)} vertices for {source}->{target}")
    return FppResult(distance=dist[target], path=path)


def brute_force_distance(env: EdgeEnvironment, target: Sequence[int], source: Sequence[int] = (0, 0)) -> float:
    """Minimum over all simple paths in the box."""
    nx, ny = env.shape
    if nx * ny > settings.FPP_BRUTE_FORCE_VERTICES:
        raise InstanceTooLargeError(f"{nx * ny} vertices exceed the brute-force limit")
    source, target = tuple(source), tuple(target)
    best = math.inf
    visited = {source}

    def walk(u: Vertex, spent: float) -> None:
        nonlocal best
        if spent >= best:
            return
        if u == target:
            best = spent
            return
        for v, w in env.neighbours(u):
            if v not in visited:
                visited.add(v)
                walk(v, spent + w)
                visited.remove(v)

    walk(source, 0.0)
    return best


def save_edge_snapshot(env: EdgeEnvironment, path: Union[str, Path]) -> Path:
    payload = np.packbits(
        np.concatenate([env.horizontal.ravel(), env.vertical.ravel()]), bitorder="little"
    ).tobytes()
    return write_container(path, KIND_EDGES, env.box, env.alpha, (env.a, env.b), env.seed, payload)


def load_edge_snapshot(path: Union[str, Path]) -> EdgeEnvironment:
    fields = read_container(path)
    if fields["kind"] != KIND_EDGES:
        raise SnapshotFormatError(f"{path} holds a site environment, not an edge environment")
    box = fields["box"]
    nx, ny = box[0][1] - box[0][0], box[1][1] - box[1][0]
    count = (nx - 1) * ny + nx * (ny - 1)
    payload = fields["payload"]
    if len(payload) != (count + 7) // 8:
        raise SnapshotFormatError(f"{path} carries {len(payload)} payload bytes for {count} edges")
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count, bitorder="little").astype(bool)
    split = (nx - 1) * ny
    a, b = fields["levels"]
    return EdgeEnvironment(
        box, fields["alpha"], a, b, fields["seed"], flat[:split].reshape(nx - 1, ny), flat[split:].reshape(nx, ny - 1)
    )


@dataclass(frozen=True)
class FppTask:
    settings: FppSettings
    length: int
    index: int


def run_fpp_sample(task: FppTask) -> SampleRow:
    cfg = task.settings
    target = (task.length, 0)
    box = fpp_box((0, 0), target, (cfg.a, cfg.b))
    seed = derive_seed(cfg.base_seed, STREAM_FPP, task.length, task.index)
    env = sample_edge_environment(box, cfg.alpha, (cfg.a, cfg.b), seed)
    return SampleRow(t=float(task.length), index=task.index, seed=seed, u=fpp_distance(env, target).distance)


@dataclass
class FppCampaignResult:
    rows: List[SampleRow]
    curve: VarianceCurve
    trend: Optional[TrendReport] = None
    partial: bool = False
    elapsed: float = 0.0


def fpp_variance_curve(config: RunConfig, jobs: int = 1, budget: Optional[float] = None) -> FppCampaignResult:
    """Variance of d(0, n e1) over the configured lengths."""
    cfg = config.fpp
    started = time.monotonic()
    deadline = started + (config.campaign.budget_seconds if budget is None else budget)
    rows: List[SampleRow] = []
    points = []
    partial = False
    for length in cfg.lengths:
        tasks = [FppTask(cfg, length, i) for i in range(cfg.samples)]
        logger.info(f"FPP length {length}: sampling {len(tasks)} edge environments")
        results, stopped = run_tasks(run_fpp_sample, tasks, jobs, deadline)
        partial |= stopped
        if len(results) < 2:
            break
        rows.extend(results)
        seed = derive_seed(cfg.base_seed, STREAM_BOOTSTRAP, length, 0)
        points.append(summarize_horizon(float(length), [r.u for r in results], cfg.bootstrap_resamples, seed))
        if stopped:
            logger.warning(f"Budget exhausted at FPP length {length}")
            break
    if not points:
        raise DegenerateDataError("FPP campaign finished without two samples at any length")
    curve = attach_growth(VarianceCurve(label="fpp_distance", points=points))
    return FppCampaignResult(
        rows=rows,
        curve=curve,
        trend=ratio_trend(curve),
        partial=partial,
        elapsed=time.monotonic() - started,
    )
