"""Seed derivation.

Every source of randomness in the package flows from one integer seed
plus a tuple of string tags naming the consumer, so independent
components get independent streams and whole runs replay bit-identically.
"""

import zlib

import numpy as np


def derive_rng(seed, *tags):
    """Generator seeded by (seed, tags); same inputs, same stream."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
