"""Seeded random streams.

All stochastic code draws from numpy's PCG64 bit generator (PCG-XSL-RR 128/64)
seeded with a 64-bit integer. Child seeds are derived with ``SeedSequence`` so
that each (seed, purpose) pair gives an independent, reproducible stream.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def derive_seed(seed: int, *keys) -> int:
    """A 64-bit child seed for ``seed`` and a path of int/str keys."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def child_rng(seed: int, *keys) -> np.random.Generator:
    return make_rng(derive_seed(seed, *keys))
