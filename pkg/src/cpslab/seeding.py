"""Deterministic seed derivation for Monte Carlo batches.

Every path gets its own child stream spawned from the master seed, so any
split of path indices across workers reproduces the single-worker output
bit for bit.
"""

import numpy as np


def spawn_seeds(seed, n):
    """Return ``n`` child SeedSequences derived from a master seed."""
    return np.random.SeedSequence(seed).spawn(n)


def path_rngs(seed, n):
    """One independent Generator per path, deterministic in (seed, index)."""
    return [np.random.default_rng(s) for s in spawn_seeds(seed, n)]


def path_normals(seed, n_paths, shape):
    """Standard normal draws of ``shape`` per path, stacked on axis 0.

    The draw for path ``p`` depends only on (seed, p), never on n_paths
    ordering or worker layout.
    """
    out = np.empty((n_paths,) + tuple(shape))
    for p, rng in enumerate(path_rngs(seed, n_paths)):
        out[p] = rng.standard_normal(shape)
    return out
