"""
Random number streams.

Every environment is drawn from a counter-based Philox generator seeded with
a 64-bit integer. Campaign seeds are derived from (base seed, stream, steps,
index) through numpy's SeedSequence so each sample can be regenerated alone.
"""

from typing import Dict

import numpy as np

RNG_ALGORITHM_ID = 1
RNG_ALGORITHMS: Dict[int, str] = {RNG_ALGORITHM_ID: "numpy.Philox4x64-10"}

# Stream tags keep the draws of different consumers independent
STREAM_ENVIRONMENT = 0
STREAM_SHIFT = 1
STREAM_BOOTSTRAP = 2
STREAM_FPP = 3
STREAM_HASH_CHECK = 4

SEED_LIMIT = 2**64


def make_generator(seed: int) -> np.random.Generator:
    """Generator for one environment or diagnostic draw."""
    if not 0 <= int(seed) < SEED_LIMIT:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(base_seed: int, stream: int, steps: int, index: int) -> int:
    """
    Mix a campaign base seed with a sample's coordinates.

    Args:
        base_seed: Campaign base seed
        stream: One of the STREAM_* tags
        steps: Horizon expressed in time steps (or lattice length)
        index: Sample index within the horizon

    Returns:
        Unsigned 64-bit seed
    """
    sequence = np.random.SeedSequence(
        entropy=int(base_seed), spawn_key=(int(stream), int(steps), int(index))
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
