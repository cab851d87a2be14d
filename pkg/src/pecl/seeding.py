"""Deterministic random stream derivation.

Every source of randomness in a run is a named child of the single run seed,
so two runs with the same config are bit-for-bit identical while the streams
for model init, noise sampling, data shuffling, etc. stay independent.
"""

from __future__ import annotations

import zlib

import numpy as np


def spawn_rng(seed: int, *tags: object) -> np.random.Generator:
    """Return a PCG64 generator derived from ``seed`` and a role path.

    Tags are stringified and hashed with crc32, which is stable across
    platforms and Python versions (unlike the builtin ``hash``).
    """
    entropy = [seed & 0xFFFFFFFF] + [zlib.crc32(str(t).encode("utf-8")) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
