"""Helpers for probability vectors over (product) state spaces."""

import numpy as np

SUM_TOL = 1e-12


def check_measure(nu, size=None, tol=SUM_TOL) -> np.ndarray:
    """Return ``nu`` as a float array after checking it is a probability vector."""
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1:
        raise ValueError("a measure must be a 1-d array")
    if size is not None and nu.size != size:
        raise ValueError(f"measure has {nu.size} entries, expected {size}")
    if np.any(nu < 0) or not np.all(np.isfinite(nu)):
        raise ValueError("measure entries must be finite and nonnegative")
    if abs(nu.sum() - 1.0) > tol:
        raise ValueError(f"measure sums to {nu.sum():.16g}, not 1")
    return nu


def tv_distance(p, q) -> float:
    """Total variation distance, half the l1 distance."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
