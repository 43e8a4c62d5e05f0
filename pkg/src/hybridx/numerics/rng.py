"""Seeded random streams.

Every stochastic step in the package draws from a Philox generator, a
counter-based bit generator whose output for a given key is fixed across
platforms and numpy versions that keep the stream stable.
"""

from __future__ import annotations

import numpy as np

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= seed <= _SEED_MASK:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(seed: int, offset: int) -> int:
    """Per-stage seed: a fixed offset from the global seed, wrapped to 64 bits."""
    return (seed + offset) & _SEED_MASK
