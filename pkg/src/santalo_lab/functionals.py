"""Functional (dual) side of the entropy inequalities.

Grid potentials with extended-real values, their exponential-weight
barycenters, the quadratic barycenter correction, pointwise-constraint
feasibility probing, the generalized integral inequality, the duality
transfer back to the entropy side, and the convex-body volume corollary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc

from . import grids
from .couplings import QuadraticForm, sup_coupling_value
from .errors import HypothesisViolated, UndefinedBarycenter
from .reports import InequalityReport
from .utils import as_weights, rng_from_seed

FEASIBILITY_EXHAUSTIVE_GUARD = 10_000_000
FEASIBILITY_SAMPLES = 1_000_000


@dataclass(frozen=True)
class GridFunction:
    """Extended-real-valued potential sampled at the cell centers of a grid.

    ``+inf`` entries encode points outside the support of e^{-f}; they are
    kept as a mask so the weight is exactly zero there.
    """

    lo: tuple
    hi: tuple
    cells: tuple
    values: np.ndarray

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != cells or vals.ndim not in (1, 2):
            raise ValueError("values shape must match the (1D/2D) cell counts")
        if np.any(np.isnan(vals)) or np.any(vals == -math.inf):
            raise ValueError("values must be real or +inf")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", vals)
        if not np.isfinite(self.log_mass()):
            raise UndefinedBarycenter("e^{-f} carries no integrable mass on the grid")

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def support(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(h - l) / c for l, h, c in zip(self.lo, self.hi, self.cells)]))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = (self.hi[axis] - self.lo[axis]) / self.cells[axis]
        return self.lo[axis] + h * (np.arange(self.cells[axis]) + 0.5)

    def coordinates(self) -> np.ndarray:
        """Cell-center coordinates of the finite-support cells, shape (m, d)."""
        if self.ndim == 1:
            pts = self.axis_centers(0)[:, None]
            return pts[self.support]
        xx, yy = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        return pts[self.support.ravel()]

    def finite_values(self) -> np.ndarray:
        return self.values[self.support]

    def log_mass(self) -> float:
        """log of int e^{-f} dx over the grid."""
        vals = self.values[self.support]
        if vals.size == 0:
            return -math.inf
        return float(logsumexp(-vals) + math.log(self.cell_volume))

    def gibbs_measure(self) -> grids.GridMeasure:
        """Normalized density proportional to e^{-f} on the same grid."""
        dens = np.zeros_like(self.values)
        sup = self.support
        shifted = self.values[sup] - self.values[sup].min()
        dens[sup] = np.exp(-shifted)
        return grids.from_density(self.lo, self.hi, dens)


def from_callable(fn, lo, hi, cells) -> GridFunction:
    lo_t = tuple(float(v) for v in np.atleast_1d(lo))
    hi_t = tuple(float(v) for v in np.atleast_1d(hi))
    cells_t = tuple(int(c) for c in np.atleast_1d(cells))
    axes = [l + (h - l) / c * (np.arange(c) + 0.5) for l, h, c in zip(lo_t, hi_t, cells_t)]
    if len(cells_t) == 1:
        vals = np.array([fn(x) for x in axes[0]], dtype=float)
    else:
        vals = np.array([[fn(a, b) for b in axes[1]] for a in axes[0]], dtype=float)
    return GridFunction(lo_t, hi_t, cells_t, vals)


def quadratic_potential(coeff: float, *, center: float = 0.0, linear: float = 0.0,
                        offset: float = 0.0, lo: float = -8.0, hi: float = 8.0,
                        cells: int = 1024) -> GridFunction:
    """1D potential coeff * (x - center)^2 / 2 + linear * x + offset."""
    return from_callable(lambda x: 0.5 * coeff * (x - center) ** 2 + linear * x + offset,
                         lo, hi, cells)


def fn_barycenter(f: GridFunction) -> np.ndarray:
    """Mass center of the measure with density proportional to e^{-f}."""
    sup = f.support
    vals = f.values[sup]
    w = np.exp(-(vals - vals.min()))
    total = w.sum()
    if not (total > 0 and np.isfinite(total)):
        raise UndefinedBarycenter("no mass under e^{-f}")
    return (w @ f.coordinates()) / total


def q_functional(fs, form: QuadraticForm) -> float:
    """Quadratic form evaluated at the concatenated potential barycenters."""
    bars = [fn_barycenter(f) for f in fs]
    return form.evaluate(bars)


@dataclass
class FeasibilityReport:
    min_margin: float
    witness: tuple
    exhaustive: bool
    probes: int


def _margin_tensor(coords, finite_vals, c, form: QuadraticForm) -> np.ndarray:
    n = len(coords)
    sizes = [v.size for v in finite_vals]
    margin = np.zeros(sizes)
    for i in range(n):
        shape = [1] * n
        shape[i] = sizes[i]
        qii = form.block(i, i)
        diag = np.einsum("kd,de,ke->k", coords[i], qii, coords[i])
        margin = margin + (c[i] * finite_vals[i] - diag).reshape(shape)
    for i in range(n):
        for j in range(i + 1, n):
            pair = 2.0 * coords[i] @ form.block(i, j) @ coords[j].T
            shape = [1] * n
            shape[i], shape[j] = sizes[i], sizes[j]
            margin = margin - pair.reshape(shape)
    return margin


def feasibility_check(fs, c, form: QuadraticForm, *, seed: int = 0,
                      max_exhaustive: int = FEASIBILITY_EXHAUSTIVE_GUARD,
                      samples: int = FEASIBILITY_SAMPLES) -> FeasibilityReport:
    """Worst violation of sum_i c_i f_i(x_i) >= <x, Q x> over probe points.

    Cells where some f_i = +inf satisfy the constraint automatically, so only
    finite-support cells are probed: exhaustively over the product grid when
    it fits ``max_exhaustive``, otherwise by Latin-hypercube sampling of at
    least ``samples`` index tuples.  Never raises on violation; reports it.
    """
    c = [float(v) for v in c]
    if len(c) != len(fs) or len(fs) != form.n:
        raise ValueError("need one coefficient and one potential per block")
    coords = [f.coordinates() for f in fs]
    finite_vals = [f.finite_values() for f in fs]
    for i, f in enumerate(fs):
        if coords[i].shape[1] != form.blocks.dims[i]:
            raise ValueError(f"potential {i} dimension does not match block {i}")
    sizes = [v.size for v in finite_vals]
    total = int(np.prod(sizes))
    if total <= max_exhaustive:
        margin = _margin_tensor(coords, finite_vals, c, form)
        flat = int(np.argmin(margin))
        idx = np.unravel_index(flat, margin.shape)
        witness = tuple(coords[i][idx[i]] for i in range(len(fs)))
        return FeasibilityReport(float(margin.min()), witness, True, total)
    sampler = qmc.LatinHypercube(d=len(fs), seed=seed)
    u = sampler.random(n=samples)
    idx = np.floor(u * np.array(sizes)).astype(int)
    idx = np.clip(idx, 0, np.array(sizes) - 1)
    vals = np.zeros(samples)
    for i in range(len(fs)):
        qii = form.block(i, i)
        xi = coords[i][idx[:, i]]
        vals += c[i] * finite_vals[i][idx[:, i]]
        vals -= np.einsum("kd,de,ke->k", xi, qii, xi)
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            xi = coords[i][idx[:, i]]
            xj = coords[j][idx[:, j]]
            vals -= 2.0 * np.einsum("kd,de,ke->k", xi, form.block(i, j), xj)
    worst = int(np.argmin(vals))
    witness = tuple(coords[i][idx[worst, i]] for i in range(len(fs)))
    return FeasibilityReport(float(vals.min()), witness, False, samples)


def _coarse_log_mass(f: GridFunction) -> float:
    # 2:1 cell aggregation of the weights; comparison against the full
    # resolution gives the quadrature error estimate
    sup = f.support
    w = np.zeros_like(f.values)
    w[sup] = np.exp(-(f.values[sup] - f.values[sup].min()))
    if f.ndim == 1 and f.cells[0] % 2 == 0:
        coarse = w[0::2] + w[1::2]
    elif f.ndim == 2 and f.cells[0] % 2 == 0 and f.cells[1] % 2 == 0:
        coarse = w[0::2, 0::2] + w[1::2, 0::2] + w[0::2, 1::2] + w[1::2, 1::2]
    else:
        return math.nan
    total = coarse.sum()
    if total <= 0:
        return math.nan
    return float(np.log(total) + math.log(f.cell_volume) - f.values[sup].min())


def bs_inequality_check(fs, c, form: QuadraticForm, dg: float, *, tol: float = 1e-6,
                        feasibility_tol: float = 1e-9, seed: int = 0) -> InequalityReport:
    """Generalized integral inequality with the barycenter correction.

    lhs = sum_i c_i log int e^{-f_i}, rhs = dg - <bar, Q bar>; the report's
    deficit is rhs - lhs (log scale), with the product-scale values in meta.
    Inputs failing the pointwise constraint are rejected: the hypothesis of
    the inequality does not hold for them.
    """
    feas = feasibility_check(fs, c, form, seed=seed)
    if feas.min_margin < -feasibility_tol:
        raise HypothesisViolated(
            f"pointwise constraint violated by {feas.min_margin:.3e} at {feas.witness}")
    log_masses = [f.log_mass() for f in fs]
    log_lhs = float(sum(ci * lm for ci, lm in zip(c, log_masses)))
    qf = q_functional(fs, form)
    log_rhs = float(dg - qf)
    quad_err = 0.0
    for ci, f, lm in zip(c, fs, log_masses):
        coarse = _coarse_log_mass(f)
        if math.isfinite(coarse):
            quad_err += abs(ci) * abs(lm - coarse)
    return InequalityReport.from_sides(
        "functional-integral-inequality", log_lhs, log_rhs, tol,
        lhs_product=math.exp(log_lhs), rhs_product=math.exp(log_rhs),
        q_functional=qf, min_margin=feas.min_margin, quad_error=quad_err,
        feasibility_probes=feas.probes)


def duality_transfer(fs, c, form: QuadraticForm, dg: float, *, tol: float = 2e-2,
                     seed: int = 0) -> InequalityReport:
    """Entropy-side inequality induced by feasible potentials.

    Builds mu_i proportional to e^{-f_i} on the grid and checks
    sum c_i h(mu_i) <= sup-coupling - <tau, Q tau> + dg, with the coupling
    supremum taken over the discretized marginals.  The Gibbs variational
    identity residual |h - int f dmu - log int e^{-f}| is reported in meta.
    """
    feas = feasibility_check(fs, c, form, seed=seed)
    if feas.min_margin < -1e-9:
        raise HypothesisViolated(
            f"pointwise constraint violated by {feas.min_margin:.3e}")
    measures = [f.gibbs_measure() for f in fs]
    entropies = [grids.grid_entropy(m) for m in measures]
    lhs = float(sum(ci * h for ci, h in zip(c, entropies)))
    qf = q_functional(fs, form)
    discretes = [grids.to_discrete(m, weight_floor=1e-300) for m in measures]
    sup_c = sup_coupling_value(discretes, form)
    rhs = float(sup_c - qf + dg)
    identity_residual = 0.0
    for f, m, h in zip(fs, measures, entropies):
        sup = f.support
        mean_f = float((m.density[sup] * f.values[sup]).sum() * m.cell_volume)
        identity_residual = max(identity_residual, abs(h - mean_f - f.log_mass()))
    return InequalityReport.from_sides(
        "entropy-side-transfer", lhs, rhs, tol,
        coupling=sup_c, q_functional=qf, gibbs_identity_residual=identity_residual,
        min_margin=feas.min_margin)


# ---------------------------------------------------------------------------
# Convex bodies, Minkowski gauges, volumes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    radius: float
    dim: int

    def __post_init__(self):
        if self.radius <= 0 or self.dim < 1:
            raise ValueError("ball needs positive radius and dimension")


@dataclass(frozen=True)
class Ellipsoid:
    """Body {x : x^T A^{-1} x <= 1} for positive definite shape matrix A."""

    shape: np.ndarray

    def __post_init__(self):
        from .linalg import as_sym
        a = as_sym(self.shape)
        if np.linalg.eigvalsh(a)[0] <= 0:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        object.__setattr__(self, "shape", a)

    @property
    def dim(self) -> int:
        return self.shape.shape[0]


@dataclass(frozen=True)
class Polytope:
    """Body {x : a_k . x <= 1 for all rows a_k}; must be bounded."""

    halfspaces: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.halfspaces, dtype=float))
        if a.size == 0 or not np.all(np.isfinite(a)):
            raise ValueError("halfspace rows must be finite and non-empty")
        object.__setattr__(self, "halfspaces", a)
        if not self._bounded():
            raise ValueError("polytope is unbounded (origin not interior to the "
                             "convex hull of the normals)")

    @property
    def dim(self) -> int:
        return self.halfspaces.shape[1]

    def _bounded(self) -> bool:
        # bounded iff every direction u has max_k a_k . u > 0
        d = self.dim
        if d == 1:
            return self.halfspaces.max() > 0 and self.halfspaces.min() < 0
        thetas = np.linspace(0.0, 2 * math.pi, 1440, endpoint=False)
        if d == 2:
            dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        else:
            dirs = rng_from_seed(0).standard_normal((4096, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        support = (self.halfspaces @ dirs.T).max(axis=0)
        return bool(support.min() > 1e-9)


def minkowski(body, x) -> float:
    """Gauge p_C(x) = inf {t > 0 : x in t C}; positively 1-homogeneous."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != body.dim:
        raise ValueError("dimension mismatch")
    if isinstance(body, Ball):
        return float(np.linalg.norm(x)) / body.radius
    if isinstance(body, Ellipsoid):
        val = float(x @ np.linalg.solve(body.shape, x))
        return math.sqrt(max(val, 0.0))
    if isinstance(body, Polytope):
        return max(float((body.halfspaces @ x).max()), 0.0)
    raise TypeError(f"unsupported body {type(body).__name__}")


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def radial_extent(body) -> float:
    """Largest distance from the origin to the body boundary."""
    if isinstance(body, Ball):
        return body.radius
    if isinstance(body, Ellipsoid):
        return math.sqrt(float(np.linalg.eigvalsh(body.shape)[-1]))
    d = body.dim
    if d == 1:
        pos = body.halfspaces[body.halfspaces[:, 0] > 0, 0]
        neg = body.halfspaces[body.halfspaces[:, 0] < 0, 0]
        return max(1.0 / pos.min(), 1.0 / abs(neg).min())
    thetas = np.linspace(0.0, 2 * math.pi, 1440, endpoint=False)
    dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    support = (body.halfspaces @ dirs.T).max(axis=0)
    return float((1.0 / support).max())


def _volume_direct(body):
    if isinstance(body, Ball):
        return unit_ball_volume(body.dim) * body.radius ** body.dim
    if isinstance(body, Ellipsoid):
        return unit_ball_volume(body.dim) * math.sqrt(float(np.linalg.det(body.shape)))
    if isinstance(body, Polytope) and body.dim == 1:
        pos = body.halfspaces[body.halfspaces[:, 0] > 0, 0]
        neg = body.halfspaces[body.halfspaces[:, 0] < 0, 0]
        return 1.0 / pos.min() + 1.0 / abs(neg).min()
    return None


def body_volume_via_layercake(body, *, method: str = "auto", rel_tol: float = 1e-4,
                              max_cells: int = 8192) -> float:
    """Volume through vol(C) = vol(B_2^d) (2 pi)^{-d/2} int e^{-p_C(x)^2 / 2} dx.

    Midpoint quadrature with Richardson-style doubling until the estimate
    moves by less than ``rel_tol`` relatively; quadrature needs d <= 2, the
    direct formulas cover balls/ellipsoids in any dimension.
    """
    if method not in ("auto", "direct", "quadrature"):
        raise ValueError("method must be auto, direct or quadrature")
    if method in ("auto", "direct"):
        direct = _volume_direct(body)
        if direct is not None and method in ("direct",):
            return direct
        if method == "auto" and body.dim > 2:
            if direct is None:
                raise ValueError("no direct formula and quadrature needs d <= 2")
            return direct
    d = body.dim
    if d > 2:
        raise ValueError("quadrature path requires d <= 2")
    radius = 8.0 * radial_extent(body)
    cells = 256
    prev = None
    while True:
        h = 2.0 * radius / cells
        centers = -radius + h * (np.arange(cells) + 0.5)
        if d == 1:
            gauges = np.array([minkowski(body, [x]) for x in centers])
            integral = float(np.exp(-0.5 * gauges ** 2).sum() * h)
        else:
            xx, yy = np.meshgrid(centers, centers, indexing="ij")
            pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
            gauges = _gauge_batch(body, pts)
            integral = float(np.exp(-0.5 * gauges ** 2).sum() * h * h)
        vol = unit_ball_volume(d) * (2.0 * math.pi) ** (-d / 2.0) * integral
        if prev is not None and abs(vol - prev) <= rel_tol * max(abs(vol), 1e-300):
            return vol
        if cells >= max_cells:
            if prev is None:
                return vol
            raise RuntimeError("volume quadrature did not stabilize "
                               f"(last change {abs(vol - prev):.3e})")
        prev = vol
        cells *= 2


def _gauge_batch(body, pts: np.ndarray) -> np.ndarray:
    if isinstance(body, Ball):
        return np.linalg.norm(pts, axis=1) / body.radius
    if isinstance(body, Ellipsoid):
        inv = np.linalg.inv(body.shape)
        return np.sqrt(np.clip(np.einsum("kd,de,ke->k", pts, inv, pts), 0.0, None))
    return np.clip((body.halfspaces @ pts.T), 0.0, None).max(axis=0)


def _body_centroid_offset(body, *, cells: int = 512):
    """Quadrature of int_C x dx (for the centering hypothesis), with vol and diam."""
    d = body.dim
    r = radial_extent(body)
    h = 2.0 * r / cells
    centers = -r + h * (np.arange(cells) + 0.5)
    if d == 1:
        inside = np.array([minkowski(body, [x]) for x in centers]) <= 1.0
        vol = float(inside.sum() * h)
        first = float((centers[inside]).sum() * h)
        return np.array([first]), vol, 2.0 * r
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    inside = _gauge_batch(body, pts) <= 1.0
    vol = float(inside.sum() * h * h)
    first = pts[inside].sum(axis=0) * h * h
    return first, vol, 2.0 * r


def geometry_check(bodies, lam, *, tol: float = 1e-3, probes_per_body: int = 64,
                   centering_tol: float = 1e-6, seed: int = 0) -> InequalityReport:
    """Volume-product inequality for convex bodies containing the origin.

    Verifies the pointwise gauge constraint
    (1/2) sum_i w_i (1 - w_i) p_{C_i}(x_i)^2 >= sum_{i<j} w_i w_j <x_i, x_j>
    by probing (the margin is 2-homogeneous, so probing a box of directions
    suffices), checks that all bodies but the last are centered, then compares
    prod vol(C_i)^{q_i} against vol(B_2^d) with q_i measuring each body's
    share of sum w_j (1 - w_j).
    """
    lam = as_weights(lam)
    n = lam.size
    if len(bodies) != n:
        raise ValueError("one body per weight required")
    d = bodies[0].dim
    if any(b.dim != d for b in bodies):
        raise ValueError("bodies must share a dimension")

    for i, body in enumerate(bodies[:-1]):
        if isinstance(body, (Ball, Ellipsoid)):
            continue  # symmetric representations are centered exactly
        first, vol, diam = _body_centroid_offset(body)
        if float(np.linalg.norm(first)) > centering_tol * vol * diam:
            raise HypothesisViolated(f"body {i} is not centered: int_C x dx = {first}")

    rng = rng_from_seed(seed)
    grids_1d = []
    for body in bodies:
        r = 1.5 * radial_extent(body)
        if d == 1:
            grids_1d.append(np.linspace(-r, r, probes_per_body)[:, None])
        else:
            pts = rng.uniform(-r, r, size=(probes_per_body, d))
            grids_1d.append(pts)
    coeff = lam * (1.0 - lam)
    min_margin = math.inf
    witness = None
    mesh = np.meshgrid(*[np.arange(len(g)) for g in grids_1d], indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=1)
    for row in idx:
        xs = [grids_1d[i][row[i]] for i in range(n)]
        quad = 0.5 * sum(coeff[i] * minkowski(bodies[i], xs[i]) ** 2 for i in range(n))
        cross = sum(lam[i] * lam[j] * float(xs[i] @ xs[j])
                    for i in range(n) for j in range(i + 1, n))
        margin = quad - cross
        if margin < min_margin:
            min_margin = margin
            witness = tuple(xs)
    scale = max(1.0, max(radial_extent(b) for b in bodies) ** 2)
    if min_margin < -1e-9 * scale:
        raise HypothesisViolated(
            f"gauge constraint violated by {min_margin:.3e} at {witness}")

    q = coeff / coeff.sum()
    volumes = [body_volume_via_layercake(b) for b in bodies]
    lhs = float(np.prod([v ** qi for v, qi in zip(volumes, q)]))
    rhs = unit_ball_volume(d)
    return InequalityReport.from_sides(
        "volume-product", lhs, rhs, tol,
        volumes=volumes, exponents=list(map(float, q)),
        constraint_margin=float(min_margin))
