"""Deterministic seed derivation.

Every random quantity in the package descends from one integer seed
through :class:`numpy.random.SeedSequence` spawn keys, so a replica's
stream depends only on ``(seed, keys)`` and never on scheduling order.

Key conventions used by the estimators (first spawn key):

====  ==========================================
0     environment sheets (lazy Brownian sheets)
1     path samplers paired with a sheet
2     grid environments (dense increments)
3     auxiliary path samplers (e.g. tube bases)
4     annealed difference-walk samplers
5     discrete return-walk simulations
6     bootstrap resampling
====  ==========================================
"""
import numpy as np

ENV_STREAM = 0
PATH_STREAM = 1
GRID_STREAM = 2
BASE_STREAM = 3
DIFF_STREAM = 4
RETURN_STREAM = 5
BOOT_STREAM = 6


def zigzag(n):
    """Map a signed integer to a nonnegative one (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...)."""
    n = int(n)
    return 2 * n if n >= 0 else -2 * n - 1


def _keys(keys):
    return tuple(zigzag(k) for k in keys)


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=_keys(keys))


def derive_seed(seed, *keys):
    """Return a 64-bit integer seed derived from ``seed`` and integer ``keys``."""
    return int(seed_sequence(seed, *keys).generate_state(1, np.uint64)[0])


def make_rng(seed, *keys):
    """Counter-based (Philox) generator for the stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))
