"""
Random two-level cube potential on a finite lattice box.

Sites are half-open unit cubes Q_k = k + [0,1)^d. Each carries the low level
``a`` with probability ``alpha`` and the high level ``b`` otherwise,
independently. Environments are immutable: flips and shifts return copies.
The site field is held one bit per cube (set bit = level b).
"""

import logging
import math
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from . import settings
from .exceptions import (
    ConfigError,
    DomainError,
    InsufficientMarginError,
    SnapshotFormatError,
)
from .seeding import RNG_ALGORITHM_ID, make_generator

logger = logging.getLogger(__name__)

SiteIndex = Tuple[int, ...]
Box = Tuple[Tuple[int, int], ...]

SNAPSHOT_MAGIC = b"HJVR"
SNAPSHOT_VERSION = 1
KIND_SITES = 0
KIND_EDGES = 1


def _normalize_box(box: Sequence[Sequence[int]]) -> Box:
    normalized = tuple((int(lo), int(hi)) for lo, hi in box)
    for lo, hi in normalized:
        if hi <= lo:
            raise ConfigError(f"box axis ({lo}, {hi}) is empty")
    return normalized


def validate_levels(alpha: float, levels: Sequence[float]) -> Tuple[float, float]:
    """Check alpha in [0,1] and a < b; return (a, b)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    a, b = (float(v) for v in levels)
    if not a < b:
        raise ConfigError(f"levels must satisfy a < b, got a={a}, b={b}")
    return a, b


@dataclass(frozen=True, eq=False)
class Environment:
    """A sampled site field on the box prod [lo_i, hi_i)."""

    box: Box
    alpha: float
    a: float
    b: float
    seed: int
    bits: bytes

    @property
    def dimension(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.box)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box], dtype=np.int64)

    @property
    def spread(self) -> float:
        return self.b - self.a

    @cached_property
    def high(self) -> np.ndarray:
        """Boolean field, True where the site carries level b."""
        count = int(np.prod(self.shape))
        raw = np.frombuffer(self.bits, dtype=np.uint8)
        flat = np.unpackbits(raw, count=count, bitorder="little").astype(bool)
        flat.setflags(write=False)
        return flat.reshape(self.shape)

    @cached_property
    def values(self) -> np.ndarray:
        """Potential level of every site as floats."""
        field = np.where(self.high, self.b, self.a)
        field.setflags(write=False)
        return field

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.dimension and all(
            lo <= int(k) < hi for k, (lo, hi) in zip(site, self.box)
        )

    def _offset(self, site: Sequence[int]) -> Tuple[int, ...]:
        if not self.contains(site):
            raise DomainError(f"site {tuple(site)} lies outside box {self.box}")
        return tuple(int(k) - lo for k, (lo, _) in zip(site, self.box))

    def is_high(self, site: Sequence[int]) -> bool:
        return bool(self.high[self._offset(site)])

    def level(self, site: Sequence[int]) -> float:
        return self.b if self.is_high(site) else self.a

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.box == other.box
            and self.alpha == other.alpha
            and self.a == other.a
            and self.b == other.b
            and np.array_equal(self.high, other.high)
        )

    def __hash__(self) -> int:
        return hash((self.box, self.alpha, self.a, self.b, self.bits))


def _pack(mask: np.ndarray) -> bytes:
    return np.packbits(mask.astype(bool).ravel(), bitorder="little").tobytes()


def environment_from_mask(
    box: Sequence[Sequence[int]],
    high: np.ndarray,
    alpha: float,
    levels: Sequence[float],
    seed: int = 0,
) -> Environment:
    """Build an environment from an explicit boolean field (True = level b)."""
    box = _normalize_box(box)
    a, b = validate_levels(alpha, levels)
    shape = tuple(hi - lo for lo, hi in box)
    high = np.asarray(high, dtype=bool)
    if high.shape != shape:
        raise ConfigError(f"field shape {high.shape} does not match box shape {shape}")
    return Environment(box=box, alpha=float(alpha), a=a, b=b, seed=int(seed), bits=_pack(high))


def sample_environment(
    box: Sequence[Sequence[int]],
    alpha: float,
    levels: Sequence[float],
    seed: int,
) -> Environment:
    """
    Draw an i.i.d. two-level field on a box.

    Args:
        box: Per-axis half-open site ranges (lo, hi)
        alpha: Probability of the low level a
        levels: (a, b) with a < b
        seed: Unsigned 64-bit seed; equal inputs give bit-identical fields

    Returns:
        Environment
    """
    box = _normalize_box(box)
    if len(box) < 2:
        raise ConfigError(f"dimension must be at least 2, got {len(box)}")
    a, b = validate_levels(alpha, levels)
    generator = make_generator(seed)
    shape = tuple(hi - lo for lo, hi in box)
    high = generator.random(shape) >= alpha
    logger.debug(f"Sampled environment on {box} with seed {seed}")
    return Environment(box=box, alpha=float(alpha), a=a, b=b, seed=int(seed), bits=_pack(high))


def box_around(center: Sequence[float], radius: float, margin: int = 0) -> Box:
    """Smallest box of sites covering the cube of the given radius around center."""
    return tuple(
        (math.floor(c - radius) - margin, math.floor(c + radius) + 1 + margin) for c in center
    )


def box_contains(outer: Box, inner: Box) -> bool:
    return all(olo <= ilo and ihi <= ohi for (olo, ohi), (ilo, ihi) in zip(outer, inner))


def potential_at(env: Environment, x: Sequence[float]) -> float:
    """V(x, omega): the level of the cube containing x."""
    site = tuple(math.floor(c) for c in x)
    return env.level(site)


def flip_site(env: Environment, site: Sequence[int]) -> Environment:
    """Swap a <-> b at one site."""
    offset = env._offset(site)
    high = env.high.copy()
    high[offset] = not high[offset]
    return replace(env, bits=_pack(high))


def shift_environment(
    env: Environment,
    z: Sequence[int],
    window: Union[Box, None] = None,
) -> Environment:
    """
    Lattice shift (tau_z omega)_k = omega_{k+z}.

    The shifted field is the same data relabelled by -z. When ``window`` is
    given the result is cropped to it and the window must fit inside the
    relabelled box.
    """
    if len(z) != env.dimension:
        raise ConfigError(f"shift {tuple(z)} does not match dimension {env.dimension}")
    moved = tuple((lo - int(s), hi - int(s)) for (lo, hi), s in zip(env.box, z))
    if window is None:
        return replace(env, box=moved)
    window = _normalize_box(window)
    if not box_contains(moved, window):
        raise InsufficientMarginError(
            f"shift {tuple(int(s) for s in z)} moves window {window} outside sampled box {env.box}"
        )
    crop = tuple(slice(wlo - mlo, whi - mlo) for (wlo, whi), (mlo, _) in zip(window, moved))
    return replace(env, box=window, bits=_pack(env.high[crop]))


def cube_crossings(x0: Sequence[float], x1: Sequence[float]) -> List[Tuple[SiteIndex, float]]:
    """
    Split the segment x0 -> x1 at every axis-boundary crossing.

    Returns (cube, fraction) pairs in traversal order, where fraction is the
    share of the segment parameter spent in the half-open cube. Pieces of
    zero length are dropped, so fractions sum to one.
    """
    start = np.asarray(x0, dtype=float)
    end = np.asarray(x1, dtype=float)
    delta = end - start
    params = [0.0, 1.0]
    for axis in range(start.size):
        step = delta[axis]
        if step == 0.0:
            continue
        lo, hi = sorted((start[axis], end[axis]))
        boundaries = np.arange(math.floor(lo) + 1, math.ceil(hi))
        params.extend(((boundaries - start[axis]) / step).tolist())
    cuts = [0.0]
    for s in np.unique(np.clip(params, 0.0, 1.0)).tolist():
        if s - cuts[-1] > settings.CROSSING_EPS:
            cuts.append(s)
    cuts[-1] = 1.0

    pieces: List[Tuple[SiteIndex, float]] = []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        midpoint = start + 0.5 * (s0 + s1) * delta
        cube = tuple(int(v) for v in np.floor(midpoint))
        fraction = float(s1 - s0)
        if pieces and pieces[-1][0] == cube:
            pieces[-1] = (cube, pieces[-1][1] + fraction)
        else:
            pieces.append((cube, fraction))
    return pieces


def segment_potential_integral(
    env: Environment,
    x0: Sequence[float],
    x1: Sequence[float],
    dt: float,
) -> float:
    """Exact integral of V along the straight segment x0 -> x1 traversed in time dt."""
    terms = []
    for cube, fraction in cube_crossings(x0, x1):
        if not env.contains(cube):
            raise DomainError(f"segment {tuple(x0)} -> {tuple(x1)} leaves box {env.box}")
        terms.append(fraction * dt * env.level(cube))
    return math.fsum(terms)


# Cylinder events on a handful of sites. Configuration index bit i set means
# site i carries level b.


def configuration_weights(n_sites: int, alpha: float) -> np.ndarray:
    """Probability of each of the 2**n configurations."""
    if not 0 < n_sites <= settings.CYLINDER_SITE_LIMIT:
        raise ConfigError(
            f"cylinder events are limited to {settings.CYLINDER_SITE_LIMIT} sites, got {n_sites}"
        )
    index = np.arange(2**n_sites)
    highs = np.zeros(index.size, dtype=np.int64)
    for i in range(n_sites):
        highs += (index >> i) & 1
    return alpha ** (n_sites - highs) * (1.0 - alpha) ** highs


def event_probability(event: np.ndarray, alpha: float) -> float:
    event = np.asarray(event, dtype=bool)
    n_sites = int(round(math.log2(event.size)))
    return math.fsum(configuration_weights(n_sites, alpha)[event].tolist())


def flip_event(event: np.ndarray, site: int) -> np.ndarray:
    """Image of an event under the flip of one site."""
    event = np.asarray(event, dtype=bool)
    return event[np.arange(event.size) ^ (1 << site)]


def measure_comparison_constants(alpha: float) -> Tuple[float, float]:
    """(C', C'') with C' P(A) <= P(phi_j A) <= C'' P(A) for every cylinder event A."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"measure comparison needs 0 < alpha < 1, got {alpha}")
    beta = 1.0 - alpha
    ratio = min(alpha / beta, beta / alpha)
    return ratio, 1.0 / ratio


# Snapshot container shared with edge environments


def _header_format(dimension: int) -> str:
    return "<4sHBB" + "ii" * dimension + "dddQH"


def write_container(
    path: Union[str, Path],
    kind: int,
    box: Box,
    alpha: float,
    levels: Tuple[float, float],
    seed: int,
    payload: bytes,
) -> Path:
    path = Path(path)
    flat_box = [v for pair in box for v in pair]
    header = struct.pack(
        _header_format(len(box)),
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        kind,
        len(box),
        *flat_box,
        alpha,
        levels[0],
        levels[1],
        seed,
        RNG_ALGORITHM_ID,
    )
    path.write_bytes(header + payload)
    return path


def read_container(path: Union[str, Path]) -> Dict[str, object]:
    data = Path(path).read_bytes()
    prefix = struct.calcsize("<4sHBB")
    if len(data) < prefix:
        raise SnapshotFormatError(f"{path} is too short to be a snapshot")
    magic, version, kind, dimension = struct.unpack_from("<4sHBB", data)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path} does not start with {SNAPSHOT_MAGIC!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"{path} has unsupported snapshot version {version}")
    fmt = _header_format(dimension)
    size = struct.calcsize(fmt)
    if len(data) < size:
        raise SnapshotFormatError(f"{path} has a truncated header")
    fields = struct.unpack_from(fmt, data)
    flat_box = fields[4 : 4 + 2 * dimension]
    alpha, a, b, seed, rng_id = fields[4 + 2 * dimension :]
    return {
        "kind": kind,
        "box": tuple((flat_box[2 * i], flat_box[2 * i + 1]) for i in range(dimension)),
        "alpha": alpha,
        "levels": (a, b),
        "seed": seed,
        "rng": rng_id,
        "payload": data[size:],
    }


def save_snapshot(env: Environment, path: Union[str, Path]) -> Path:
    """Write the binary snapshot of a site environment."""
    return write_container(path, KIND_SITES, env.box, env.alpha, (env.a, env.b), env.seed, env.bits)


def load_snapshot(path: Union[str, Path]) -> Environment:
    fields = read_container(path)
    if fields["kind"] != KIND_SITES:
        raise SnapshotFormatError(f"{path} holds an edge environment, not a site environment")
    box = fields["box"]
    count = int(np.prod([hi - lo for lo, hi in box]))
    payload = fields["payload"]
    if len(payload) != (count + 7) // 8:
        raise SnapshotFormatError(f"{path} carries {len(payload)} payload bytes for {count} sites")
    return Environment(
        box=box,
        alpha=fields["alpha"],
        a=fields["levels"][0],
        b=fields["levels"][1],
        seed=fields["seed"],
        bits=bytes(payload),
    )
