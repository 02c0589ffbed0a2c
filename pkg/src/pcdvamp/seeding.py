"""Explicit 64-bit seed handling.

All randomness in the package flows through :func:`make_rng`, which builds a
PCG64 generator from a ``numpy.random.SeedSequence``. Sub-streams are derived
by spawn keys, so there is no hidden global state.

Per-trial seeds follow a fixed rule so that results do not depend on how
trials are scheduled across workers::

    trial_seed(master, i) = master XOR splitmix64(i)
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer applied to ``x + golden``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master: int, index: int) -> int:
    return (int(master) & MASK64) ^ splitmix64(int(index))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
