"""Per-sample seed derivation.

Every Monte Carlo sample draws its noise from ``derive_seed(master, *keys)``,
so results do not depend on chunking or thread scheduling.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master_seed: int, *keys: int) -> int:
    """Mix a master seed with integer keys into a 63-bit sample seed.

    The mixing function is numpy's ``SeedSequence`` hash applied to the
    entropy tuple ``(master_seed, *keys)``.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def brownian_increments(seed: int, dt: np.ndarray, dim: int) -> np.ndarray:
    """Brownian increments over intervals of lengths ``dt``, shape (n, dim)."""
    dt = np.asarray(dt, dtype=float)
    z = rng_for(seed).standard_normal((dt.shape[0], dim))
    return z * np.sqrt(dt)[:, None]
