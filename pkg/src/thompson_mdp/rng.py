"""Deterministic derivation of independent random streams.

Every consumer gets its own generator keyed by ``(master_seed, *keys)``.
The bit generator is Philox (counter based), and the key material comes from
``numpy.random.SeedSequence`` so that adding a new purpose tag never shifts
the draws of existing ones.
"""
from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def tag(name: str) -> int:
    """Stable integer tag for a purpose string (crc32, platform independent)."""
    return zlib.crc32(name.encode("utf-8"))


def _key(k) -> int:
    if isinstance(k, str):
        return tag(k)
    k = int(k)
    if k < 0:
        raise ValueError(f"stream keys must be nonnegative, got {k}")
    return k


def stream(master_seed: int, *keys) -> np.random.Generator:
    """Return a Philox generator for ``(master_seed, *keys)``.

    Keys may be nonnegative ints or strings (hashed with :func:`tag`).
    """
    ss = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for building sub-streams."""
    return int(rng.integers(0, 2**63 - 1))
