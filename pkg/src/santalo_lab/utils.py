"""Small shared helpers."""

from __future__ import annotations

import numpy as np

from .errors import SimplexViolation


def as_weights(lam, *, tol: float = 1e-9) -> np.ndarray:
    """Validate a strictly positive probability vector and return it as an array."""
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size == 0 or not np.all(np.isfinite(lam)):
        raise SimplexViolation("weights must be finite and non-empty")
    if np.any(lam <= 0):
        raise SimplexViolation("weights must be strictly positive")
    if abs(lam.sum() - 1.0) > tol:
        raise SimplexViolation(f"weights sum to {lam.sum():.12g}, expected 1")
    return lam


def rng_from_seed(seed) -> np.random.Generator:
    return np.random.default_rng(seed)
