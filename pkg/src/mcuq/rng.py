"""Deterministic random-stream derivation.

Every source of randomness in this package is a named substream of one
root seed.  A substream is identified by the root seed plus a tag path
(component name and indices), so independent components and independent
Monte Carlo passes never share or race on a generator, and results are
reproducible regardless of execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _tag_word(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(seed: int, *tags: int | str) -> np.random.Generator:
    """Return a fresh Generator for the (seed, *tags) stream.

    String tags are hashed with a fixed (unsalted) hash so the mapping is
    stable across processes and platforms.
    """
    entropy = [int(seed) & _MASK64] + [_tag_word(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def pass_stream(base_seed: int, pass_index: int) -> np.random.Generator:
    """Generator for Monte Carlo pass ``pass_index`` under ``base_seed``."""
    return substream(base_seed, "mc-pass", pass_index)
