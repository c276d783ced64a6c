"""Seeded random streams.

Every stochastic operation in the package takes an explicit
:class:`numpy.random.Generator`. Generators are always built on the PCG64
bit generator (numpy's default), whose output stream for a given seed is
fixed across platforms and numpy releases. Independent child streams are
derived with :class:`numpy.random.SeedSequence` spawning, never by reusing a
generator across concurrent tasks.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeededRng = np.random.Generator
RngLike = Union[int, np.random.Generator, None]

SEED_MASK = (1 << 64) - 1


def seeded_rng(seed: RngLike = 0) -> SeededRng:
    """Return a PCG64 generator for ``seed`` (pass-through for generators)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def spawn(seed: int, n: int) -> list[SeededRng]:
    """``n`` statistically independent generators derived from ``seed``."""
    children = np.random.SeedSequence(int(seed) & SEED_MASK).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def child_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit seed for the cell identified by ``keys``."""
    ss = np.random.SeedSequence([int(seed) & SEED_MASK, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
