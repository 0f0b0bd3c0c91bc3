"""Deterministic, collision-free RNG substreams.

Every source of randomness in the package draws from its own named stream
derived from (seed, *keys).  Streams are independent of each other and of
the order in which other streams are consumed, so e.g. disabling the
boundary attack cannot change how batches are shuffled.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


def substream(seed: int, *keys) -> np.random.Generator:
    """Return a Generator for the stream named by (seed, *keys)."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
