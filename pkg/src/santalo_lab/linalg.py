"""Dense symmetric-matrix kernel.

Block layout bookkeeping, PSD tests, matrix square roots, log-determinants
and the Frobenius projection onto the PSD cone.  All tolerances are relative
to the matrix scale so behaviour is invariant under rescaling.

Matrices are plain ``numpy`` arrays; :func:`as_sym` is the validating
constructor used at public boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SpectrumError

SYM_TOL = 1e-12


@dataclass(frozen=True)
class BlockStructure:
    """Decomposition of R^total into coordinate blocks of sizes ``dims``."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise ValueError("block dimensions must be positive integers")
        object.__setattr__(self, "dims", dims)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def offsets(self) -> tuple:
        """Prefix sums of ``dims``; length n + 1, strictly increasing."""
        out = [0]
        for d in self.dims:
            out.append(out[-1] + d)
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.dims)

    def slice(self, i: int) -> slice:
        off = self.offsets
        return slice(off[i], off[i + 1])


def as_sym(a, *, tol: float = SYM_TOL) -> np.ndarray:
    """Validate a square symmetric matrix and return the symmetrized copy.

    Asymmetry up to ``tol * (1 + max|A|)`` is forgiven and averaged away;
    anything larger, or a non-finite entry, is an input error.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    scale = 1.0 + (np.abs(a).max() if a.size else 0.0)
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return (a + a.T) / 2.0


def block(a: np.ndarray, bs: BlockStructure, i: int, j: int) -> np.ndarray:
    """Return the (i, j) sub-block of ``a`` under ``bs`` (0-based indices)."""
    if a.shape != (bs.total, bs.total):
        raise ValueError(f"matrix order {a.shape} does not match block total {bs.total}")
    if not (0 <= i < bs.n and 0 <= j < bs.n):
        raise ValueError(f"block index ({i}, {j}) out of range for n={bs.n}")
    return np.array(a[bs.slice(i), bs.slice(j)])


def is_psd(a: np.ndarray, tol: float = 1e-10) -> bool:
    """True iff the smallest eigenvalue of ``a`` is at least ``-tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    a = as_sym(a)
    if a.size == 0:
        return True
    return float(np.linalg.eigvalsh(a)[0]) >= -tol


def sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by spectral decomposition.

    Eigenvalues below zero are clamped; an eigenvalue below
    ``-1e-8 * ||A||`` means the input is not PSD and raises.
    """
    a = as_sym(a)
    w, v = np.linalg.eigh(a)
    scale = max(abs(w[0]), abs(w[-1]), 0.0) if w.size else 0.0
    if w.size and w[0] < -1e-8 * max(scale, 1e-300):
        raise SpectrumError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0


def logdet(a: np.ndarray) -> float:
    """Log-determinant of a positive definite matrix via Cholesky.

    Raises :class:`SpectrumError` when the smallest eigenvalue is below
    ``1e-12 * ||A||`` (singular or indefinite), which upstream code treats
    as entropy = -inf.
    """
    a = as_sym(a)
    w = np.linalg.eigvalsh(a)
    scale = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if w.size == 0:
        return 0.0
    if w[0] <= 1e-12 * max(scale, 1e-300):
        raise SpectrumError(f"matrix is singular or indefinite (min eigenvalue {w[0]:.3e})")
    chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def project_psd(a: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm: eigenvalues clamped at zero."""
    a = as_sym(a)
    w, v = np.linalg.eigh(a)
    if w.size and w[0] >= 0.0:
        return a
    p = (v * np.clip(w, 0.0, None)) @ v.T
    return (p + p.T) / 2.0
