"""Reproducible random number utilities shared by the whole package.

All randomness flows through counter-based Philox generators keyed by
integer tuples, and all continuous draws are derived from uniform doubles
via explicit inverse-CDF transforms.  This keeps every stream independent
of execution order and makes the scalar and vectorized simulation paths
bit-identical: drawing a (W, m) block of uniforms consumes the generator
exactly like W successive draws of m uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

# Uniform doubles from Generator.random() live on the grid j/2**53,
# j = 0..2**53-1.  Shifting by half a grid step keeps the inverse normal
# CDF away from 0 and 1 (no infinities) and keeps the draw symmetric.
_HALF_STEP = 2.0 ** -54


def make_rng(*keys: int) -> np.random.Generator:
    """Philox generator keyed by one or more non-negative integers."""
    seq = np.random.SeedSequence([int(k) for k in keys])
    return np.random.Generator(np.random.Philox(seq))


def normal_from_uniform(u: np.ndarray) -> np.ndarray:
    """Standard normal via the inverse CDF applied to uniform doubles."""
    return ndtri(np.asarray(u) + _HALF_STEP)


def standard_normal(rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-CDF standard normal draws (one uniform double per draw)."""
    return normal_from_uniform(rng.random(size))


def categorical_from_uniform(cdf: np.ndarray, u) -> np.ndarray:
    """Index draws from a cumulative distribution given uniforms in [0, 1).

    `cdf` is the inclusive cumulative sum of the probability vector; its
    last entry should be 1 up to round-off.  Works for scalar or array `u`.
    """
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def rows_categorical_from_uniform(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw where row i uses cdf_rows[i]."""
    # (R, m) < (R, 1) comparison; argmax picks the first True per row.
    hit = u[:, None] < cdf_rows
    # Guard against round-off leaving a row all-False.
    out = np.argmax(hit, axis=1)
    bad = ~hit.any(axis=1)
    if np.any(bad):
        out[bad] = cdf_rows.shape[1] - 1
    return out
