"""Seeded, splittable random streams.

All randomness goes through counter-based Philox generators keyed by a
``SeedSequence``.  A stream is identified by ``(seed, *keys)``, so two
components asking for different keys never share draws, and the same key
always reproduces the same draws.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``n`` independent child streams."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(0 if seed_or_rng is None else seed_or_rng)
