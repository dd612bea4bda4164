"""Deterministic RNG streams.

Every source of randomness in the package is a `numpy.random.Generator`
derived from a master seed plus a tuple of tags (strings or ints). Streams for
different tags are independent, and a stream's output never depends on how
many other streams exist or in which order they are drawn from. This is what
makes parallel client training reproducible regardless of scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = 0xFFFFFFFF


def _encode(tag) -> int:
    # Stable across processes: never use built-in hash(), it is salted.
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK
    return zlib.crc32(str(tag).encode("utf-8")) & _MASK


def stream(seed: int, *tags) -> np.random.Generator:
    """Return an independent Generator for (seed, *tags)."""
    entropy = [int(seed) & _MASK] + [_encode(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
