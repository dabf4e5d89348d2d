"""Deterministic RNG streams keyed by arbitrary labels.

Every stochastic component derives its generator from seeded_rng(...) so that
independent pieces of work (graphs, epochs, drop masks) own non-overlapping,
reproducible streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)) and int(key) >= 0:
        return int(key)
    digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seeded_rng(*keys) -> np.random.Generator:
    """Return a Generator whose stream depends only on the key tuple."""
    entropy = [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return seeded_rng(seed)
