"""Named, reproducible random streams.

Every consumer derives its own generator from ``(seed, purpose, *extra)`` so
that adding draws in one place never shifts the numbers seen elsewhere.
"""
from __future__ import annotations

import zlib

import numpy as np


def _entropy(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


def make_rng(seed, purpose: str, *extra: int) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode())
    return np.random.default_rng(_entropy(seed) + [tag] + [int(e) for e in extra])
