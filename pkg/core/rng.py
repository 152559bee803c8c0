"""
Named random streams. One master seed fans out into independent,
reproducible sub-streams ("split", "negatives", "attack", ...).
"""

import zlib
from typing import Union

import numpy as np


def derive_seed(seed: int, name: str, *extra: int) -> int:
    """
    Derives a 63-bit seed for the sub-stream `name` of a master seed

    Args:
        seed: master seed
        name: stream name
        extra: additional integers (epoch index, fraction index, ...)

    Returns:
        Deterministic integer seed
    """
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))] + [int(e) & 0xFFFFFFFF for e in extra]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def stream(seed: Union[int, None], name: str, *extra: int) -> np.random.Generator:
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(derive_seed(seed, name, *extra))
