"""Closed-form Gaussian calculus.

Shannon entropy, relative entropy against the standard Gaussian, the
quadratic Wasserstein distance and Wasserstein barycenters of centered
Gaussians, all in exact closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, SpectrumError
from .linalg import as_sym, is_psd, logdet, sqrt_psd
from .utils import as_weights

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "Gaussian",
    "gaussian_entropy",
    "relative_entropy_gaussian",
    "w2_gaussian",
    "barycenter_gaussian",
]


@dataclass(frozen=True)
class Gaussian:
    """Gaussian measure N(mean, cov); ``cov`` must be PSD within 1e-10."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = as_sym(np.atleast_2d(self.cov))
        if mean.ndim != 1 or mean.size != cov.shape[0]:
            raise ValueError("mean dimension does not match covariance order")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        scale = max(float(np.abs(cov).max()), 1.0) if cov.size else 1.0
        if not is_psd(cov, tol=1e-10 * scale):
            raise SpectrumError("covariance is not PSD within tolerance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @staticmethod
    def centered(cov) -> "Gaussian":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return Gaussian(np.zeros(cov.shape[0]), cov)

    @staticmethod
    def standard(dim: int) -> "Gaussian":
        return Gaussian(np.zeros(dim), np.eye(dim))

    @staticmethod
    def iso(dim: int, var: float, mean=None) -> "Gaussian":
        m = np.zeros(dim) if mean is None else np.full(dim, float(mean))
        return Gaussian(m, var * np.eye(dim))


def gaussian_entropy(g: Gaussian) -> float:
    """Shannon entropy (d/2) log(2*pi*e) + (1/2) logdet(cov); mean plays no role."""
    d = g.dim
    try:
        half_logdet = 0.5 * logdet(g.cov)
    except SpectrumError as exc:
        raise SpectrumError("entropy undefined for singular covariance (-inf)") from exc
    return 0.5 * d * (LOG_2PI + 1.0) + half_logdet


def relative_entropy_gaussian(g: Gaussian) -> float:
    """Relative entropy D(g || standard Gaussian).

    Closed form (tr K + |m|^2 - d - logdet K) / 2.  A singular covariance is
    reported as +inf rather than raised: checkers classify, they don't crash.
    """
    try:
        ld = logdet(g.cov)
    except SpectrumError:
        return math.inf
    val = 0.5 * (float(np.trace(g.cov)) + float(g.mean @ g.mean) - g.dim - ld)
    return max(val, 0.0)


def w2_gaussian(g1: Gaussian, g2: Gaussian) -> float:
    """Quadratic Wasserstein distance between two Gaussians (the distance itself).

    W2^2 = |m1 - m2|^2 + tr(K1 + K2 - 2 (K2^{1/2} K1 K2^{1/2})^{1/2}).
    """
    if g1.dim != g2.dim:
        raise ValueError("dimension mismatch")
    r2 = sqrt_psd(g2.cov)
    cross = sqrt_psd(r2 @ g1.cov @ r2)
    sq = float(g1.mean @ g1.mean - 2 * g1.mean @ g2.mean + g2.mean @ g2.mean)
    sq += float(np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return math.sqrt(max(sq, 0.0))


def barycenter_gaussian(weights, gs, *, tol: float = 1e-12, max_iter: int = 10_000) -> Gaussian:
    """Wasserstein barycenter of centered Gaussians by fixed-point iteration.

    Iterates K <- sum_i w_i (K^{1/2} K_i K^{1/2})^{1/2} from K = sum_i w_i K_i
    until successive iterates differ by less than ``tol`` in Frobenius norm.
    The fixed point satisfies the barycenter covariance equation within 1e-10.
    """
    lam = as_weights(weights)
    gs = list(gs)
    if len(gs) != lam.size:
        raise ValueError("one weight per measure required")
    for g in gs:
        if float(np.abs(g.mean).max(initial=0.0)) > 1e-12:
            raise ValueError("barycenter_gaussian requires centered inputs")
    if len(gs) == 1:
        return gs[0]
    dim = gs[0].dim
    if any(g.dim != dim for g in gs):
        raise ValueError("dimension mismatch")
    k = sum(w * g.cov for w, g in zip(lam, gs))
    for _ in range(max_iter):
        root = sqrt_psd(k)
        nxt = sum(w * sqrt_psd(root @ g.cov @ root) for w, g in zip(lam, gs))
        nxt = (nxt + nxt.T) / 2.0
        if float(np.linalg.norm(nxt - k)) < tol:
            return Gaussian.centered(nxt)
        k = nxt
    raise ConvergenceFailure(f"barycenter fixed point did not converge in {max_iter} iterations")
