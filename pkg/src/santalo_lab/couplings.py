"""Coupling optimizers.

Two families of solvers over couplings with prescribed marginals:

* :func:`max_coupling_gaussian` -- supremum of a quadratic form over couplings
  of centered Gaussians.  The objective depends on a coupling only through its
  joint covariance, so the problem is the linear SDP
  ``max tr(Q S) over S >= 0 with diagonal blocks S_ii = K_i``.
  Closed forms are used where they exist (two marginals; commuting covariances
  with nonnegative scaled-identity cross blocks); the general case runs ADMM on
  the same two projections (PSD cone, fixed diagonal blocks) with a Dykstra
  polish so the reported value is an achieved, feasible objective value.

* :func:`mmot_exact` / :func:`mmot_sinkhorn` -- discrete multimarginal optimal
  transport, exactly as a linear program over the full product tensor, or
  approximately by cyclic entropic scaling in the log domain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse
from scipy.special import logsumexp

from .errors import SizeGuardExceeded
from .linalg import BlockStructure, as_sym, block, is_psd, project_psd, sqrt_psd
from .utils import as_weights

MMOT_EXACT_GUARD = 1_000_000
MMOT_SINKHORN_GUARD = 10_000_000


@dataclass(frozen=True)
class QuadraticForm:
    """Symmetric matrix on a block-decomposed space, with block accessors."""

    matrix: np.ndarray
    blocks: BlockStructure

    def __post_init__(self):
        m = as_sym(self.matrix)
        if m.shape[0] != self.blocks.total:
            raise ValueError("matrix order does not match block structure total")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.blocks.n

    def block(self, i: int, j: int) -> np.ndarray:
        return block(self.matrix, self.blocks, i, j)

    def evaluate(self, xs) -> float:
        """<x, Q x> at the concatenation of the per-block vectors ``xs``."""
        x = np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in xs])
        if x.size != self.blocks.total:
            raise ValueError("concatenated probe has wrong dimension")
        return float(x @ self.matrix @ x)

    def add_ridge(self, delta: float) -> "QuadraticForm":
        return QuadraticForm(self.matrix + float(delta) * np.eye(self.blocks.total), self.blocks)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure with pairwise distinct atoms."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size or pts.shape[0] == 0:
            raise ValueError("points and weights must have equal positive length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.15g}, expected 1 within 1e-12")
        if pts.shape[0] > 1:
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
            np.fill_diagonal(dist, np.inf)
            if dist.min() == 0.0:
                raise ValueError("support points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass
class CouplingResult:
    value: float
    optimizer: np.ndarray
    iterations: int
    gap: float
    status: str
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Gaussian coupling SDP
# ---------------------------------------------------------------------------

def _diag_contribution(form: QuadraticForm, covs) -> float:
    return float(sum(np.trace(form.block(i, i) @ covs[i]) for i in range(form.n)))


def two_marginal_cross_value(q12: np.ndarray, k1: np.ndarray, k2: np.ndarray) -> float:
    """Closed-form optimal cross term for two marginals.

    Equals the nuclear norm of ``2 K2^{1/2} Q12^T K1^{1/2}``, i.e.
    ``tr((K1^{1/2} A K2 A^T K1^{1/2})^{1/2})`` with ``A = 2 Q12``.
    """
    m = 2.0 * sqrt_psd(k2) @ q12.T @ sqrt_psd(k1)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def _closed_form_two_marginal(form: QuadraticForm, covs) -> CouplingResult:
    k1, k2 = covs
    q12 = form.block(0, 1)
    r1, r2 = sqrt_psd(k1), sqrt_psd(k2)
    m = 2.0 * r2 @ q12.T @ r1
    w_svd, sv, vt = np.linalg.svd(m)
    cross = float(sv.sum())
    # optimal contraction U = V W^T gives the cross block C = K1^{1/2} U K2^{1/2}
    u_opt = vt.T @ w_svd.T
    c = r1 @ u_opt @ r2
    sigma = np.block([[k1, c], [c.T, k2]])
    value = _diag_contribution(form, covs) + cross
    return CouplingResult(value=value, optimizer=as_sym(sigma), iterations=0, gap=0.0,
                          status="converged", meta={"method": "closed-form-two-marginal"})


def _scaled_identity_cross(form: QuadraticForm, tol: float = 1e-12):
    """Off-diagonal coefficients q_ij when every cross block is q_ij * I, else None."""
    dims = form.blocks.dims
    n = form.n
    coeff = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if dims[i] != dims[j]:
                return None
            b = form.block(i, j)
            q = float(np.trace(b)) / dims[i]
            if np.abs(b - q * np.eye(dims[i])).max() > tol * (1.0 + abs(q)):
                return None
            coeff[i, j] = coeff[j, i] = q
    return coeff


def _all_commute(covs, tol: float = 1e-10) -> bool:
    for a, b in itertools.combinations(covs, 2):
        scale = 1.0 + float(np.abs(a).max()) * float(np.abs(b).max())
        if np.abs(a @ b - b @ a).max() > tol * scale:
            return False
    return True


def _comonotone_gaussian(form: QuadraticForm, covs, coeff) -> CouplingResult:
    # X_i = K_i^{1/2} Z with a shared Z attains every pairwise Cauchy-Schwarz
    # bound simultaneously; optimal when all cross coefficients are >= 0.
    roots = [sqrt_psd(k) for k in covs]
    n = form.n
    cross = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            cross += 2.0 * coeff[i, j] * float(np.trace(roots[i] @ roots[j]))
    stacked = np.vstack(roots)
    sigma = stacked @ stacked.T
    value = _diag_contribution(form, covs) + cross
    return CouplingResult(value=value, optimizer=as_sym(sigma), iterations=0, gap=0.0,
                          status="converged", meta={"method": "comonotone"})


def _set_diag_blocks(sigma: np.ndarray, covs, bs: BlockStructure) -> np.ndarray:
    out = sigma.copy()
    for i, k in enumerate(covs):
        s = bs.slice(i)
        out[s, s] = k
    return out


def dykstra_feasible(sigma: np.ndarray, covs, bs: BlockStructure,
                     max_iter: int = 500, tol: float = 1e-13) -> np.ndarray:
    """Dykstra alternating projections onto {diag blocks fixed} and the PSD cone."""
    x = _set_diag_blocks(sigma, covs, bs)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = project_psd(x + p)
        p = x + p - y
        x_new = _set_diag_blocks(y + q, covs, bs)
        q = y + q - x_new
        if np.linalg.norm(x_new - x) < tol * (1.0 + np.linalg.norm(x)):
            x = x_new
            break
        x = x_new
    return project_psd(x)


def _admm_coupling(form: QuadraticForm, covs, max_iter: int, tol: float) -> CouplingResult:
    bs = form.blocks
    qmat = form.matrix
    rho = max(float(np.linalg.norm(qmat, 2)), 1e-12)
    alpha = 1.7  # over-relaxation
    sigma = _set_diag_blocks(np.zeros((bs.total, bs.total)), covs, bs)
    z = sigma.copy()
    u = np.zeros_like(sigma)
    it = 0
    status = "max-iter"
    for it in range(1, max_iter + 1):
        sigma = _set_diag_blocks(z - u + qmat / rho, covs, bs)
        sx = alpha * sigma + (1.0 - alpha) * z
        z_new = project_psd(sx + u)
        primal = np.linalg.norm(sigma - z_new)
        dual = rho * np.linalg.norm(z_new - z)
        z = z_new
        u = u + sx - z
        scale = 1.0 + np.linalg.norm(z)
        if primal < tol * scale and dual < tol * scale:
            status = "converged"
            break
    feasible = dykstra_feasible(z, covs, bs)
    value = float(np.sum(qmat * feasible))
    value_relaxed = float(np.sum(qmat * z))
    gap = abs(value_relaxed - value) + float(primal + dual)
    return CouplingResult(value=value, optimizer=feasible, iterations=it, gap=gap,
                          status=status, meta={"method": "admm", "rho": rho})


def max_coupling_gaussian(form: QuadraticForm, covs, *, method: str = "auto",
                          max_iter: int = 20_000, tol: float = 1e-12) -> CouplingResult:
    """Maximize tr(Q Sigma) over joint covariances with fixed diagonal blocks.

    ``covs`` are the marginal covariances K_i (PSD, one per block).  The
    returned value is evaluated at a feasible joint covariance, hence a
    certified achieved value; ``gap`` is a heuristic stall-based bound for the
    ADMM path and exactly zero on the closed-form paths.
    """
    covs = [as_sym(k) for k in covs]
    if len(covs) != form.n:
        raise ValueError("one covariance per block required")
    for i, k in enumerate(covs):
        if k.shape[0] != form.blocks.dims[i]:
            raise ValueError(f"covariance {i} has order {k.shape[0]}, "
                             f"expected {form.blocks.dims[i]}")
        scale = max(float(np.abs(k).max()), 1.0)
        if not is_psd(k, tol=1e-10 * scale):
            raise ValueError(f"covariance {i} is not PSD")

    if method == "auto":
        if form.n == 2:
            method = "closed-form"
        else:
            coeff = _scaled_identity_cross(form)
            if coeff is not None and np.all(coeff >= 0.0) and _all_commute(covs):
                method = "comonotone"
            else:
                method = "admm"
    if method == "closed-form":
        if form.n != 2:
            raise ValueError("closed form requires exactly two marginals")
        return _closed_form_two_marginal(form, covs)
    if method == "comonotone":
        coeff = _scaled_identity_cross(form)
        if coeff is None or np.any(coeff < 0.0) or not _all_commute(covs):
            raise ValueError("comonotone path requires commuting covariances and "
                             "nonnegative scaled-identity cross blocks")
        return _comonotone_gaussian(form, covs, coeff)
    if method == "admm":
        return _admm_coupling(form, covs, max_iter, tol)
    raise ValueError(f"unknown method {method!r}")


def min_coupling_gaussian(form: QuadraticForm, covs, **kwargs) -> CouplingResult:
    """Minimize tr(Q Sigma) over the same feasible set (sign-flipped SDP)."""
    flipped = QuadraticForm(-form.matrix, form.blocks)
    res = max_coupling_gaussian(flipped, covs, **kwargs)
    res.value = -res.value
    return res


# ---------------------------------------------------------------------------
# Discrete multimarginal optimal transport
# ---------------------------------------------------------------------------

def _support_arrays(measures):
    return [m.points for m in measures], [m.weights for m in measures]


def pairwise_quadratic_cost(measures, weights) -> np.ndarray:
    """Cost tensor sum_{i<j} w_i w_j |x_i - x_j|^2 on the product of supports."""
    lam = as_weights(weights)
    pts, _ = _support_arrays(measures)
    n = len(measures)
    if n != lam.size:
        raise ValueError("one weight per marginal required")
    sizes = [m.size for m in measures]
    cost = np.zeros(sizes)
    for i in range(n):
        for j in range(i + 1, n):
            d2 = ((pts[i][:, None, :] - pts[j][None, :, :]) ** 2).sum(-1)
            shape = [1] * n
            shape[i], shape[j] = sizes[i], sizes[j]
            cost = cost + lam[i] * lam[j] * d2.reshape(shape)
    return cost


def quadratic_form_cost(measures, form: QuadraticForm) -> np.ndarray:
    """Cost tensor <x, Q x> on the product of supports."""
    pts, _ = _support_arrays(measures)
    n = len(measures)
    if n != form.n:
        raise ValueError("one marginal per block required")
    for i, m in enumerate(measures):
        if m.dim != form.blocks.dims[i]:
            raise ValueError(f"marginal {i} dimension does not match block {i}")
    sizes = [m.size for m in measures]
    cost = np.zeros(sizes)
    for i in range(n):
        qii = form.block(i, i)
        diag = np.einsum("kd,de,ke->k", pts[i], qii, pts[i])
        shape = [1] * n
        shape[i] = sizes[i]
        cost = cost + diag.reshape(shape)
    for i in range(n):
        for j in range(i + 1, n):
            qij = form.block(i, j)
            pair = 2.0 * pts[i] @ qij @ pts[j].T
            shape = [1] * n
            shape[i], shape[j] = sizes[i], sizes[j]
            cost = cost + pair.reshape(shape)
    return cost


def _resolve_cost(measures, cost) -> np.ndarray:
    if isinstance(cost, QuadraticForm):
        return quadratic_form_cost(measures, cost)
    arr = np.asarray(cost, dtype=float)
    if arr.ndim == 1:
        return pairwise_quadratic_cost(measures, arr)
    sizes = tuple(m.size for m in measures)
    if arr.shape != sizes:
        raise ValueError(f"cost tensor shape {arr.shape} does not match supports {sizes}")
    return arr


def _marginal_constraints(sizes):
    """Sparse equality matrix: one row per (marginal, support point)."""
    total = int(np.prod(sizes))
    blocks = []
    for i, m in enumerate(sizes):
        before = int(np.prod(sizes[:i], initial=1))
        after = int(np.prod(sizes[i + 1:], initial=1))
        a = scipy.sparse.kron(
            scipy.sparse.csr_matrix(np.ones((1, before))),
            scipy.sparse.kron(scipy.sparse.eye(m, format="csr"),
                              scipy.sparse.csr_matrix(np.ones((1, after)))),
            format="csr",
        )
        blocks.append(a)
    mat = scipy.sparse.vstack(blocks, format="csr")
    assert mat.shape == (sum(sizes), total)
    return mat


def mmot_exact(measures, cost, sense: str = "min") -> CouplingResult:
    """Exact multimarginal OT by linear programming on the full product tensor.

    ``cost`` may be a ready tensor, a :class:`QuadraticForm` (objective
    <x, Q x>) or a weight vector (pairwise quadratic cost).  The product of
    support sizes is guarded at 10^6 cells.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    sizes = tuple(m.size for m in measures)
    total = int(np.prod(sizes))
    if total > MMOT_EXACT_GUARD:
        raise SizeGuardExceeded(f"product support {total} exceeds {MMOT_EXACT_GUARD}")
    cost_t = _resolve_cost(measures, cost)
    c = cost_t.ravel() if sense == "min" else -cost_t.ravel()
    a_eq = _marginal_constraints(sizes)
    b_eq = np.concatenate([m.weights for m in measures])
    res = scipy.optimize.linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 2:
        return CouplingResult(value=math.nan, optimizer=np.zeros(sizes), iterations=0,
                              gap=math.inf, status="infeasible", meta={"message": res.message})
    if not res.success:
        return CouplingResult(value=math.nan, optimizer=np.zeros(sizes), iterations=int(res.nit),
                              gap=math.inf, status="max-iter", meta={"message": res.message})
    plan = res.x.reshape(sizes)
    value = float(np.sum(cost_t * plan))
    residual = _marginal_residual(plan, measures)
    return CouplingResult(value=value, optimizer=plan, iterations=int(res.nit), gap=0.0,
                          status="converged", meta={"marginal_residual": residual})


def _marginal_residual(plan: np.ndarray, measures) -> float:
    n = plan.ndim
    worst = 0.0
    for i, m in enumerate(measures):
        axes = tuple(k for k in range(n) if k != i)
        worst = max(worst, float(np.abs(plan.sum(axis=axes) - m.weights).sum()))
    return worst


def mmot_sinkhorn(measures, cost, sense: str = "min", epsilon: float = 0.1, *,
                  max_rounds: int = 50_000, marginal_tol: float = 1e-9) -> CouplingResult:
    """Multimarginal Sinkhorn: cyclic marginal scaling in the log domain.

    Runs until every marginal residual (L1) is below ``marginal_tol`` or the
    round budget is exhausted.  ``value`` is the plug-in cost of the returned
    coupling under the *unregularized* objective; the entropically regularized
    objective is reported in ``meta``.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    sizes = tuple(m.size for m in measures)
    total = int(np.prod(sizes))
    if total > MMOT_SINKHORN_GUARD:
        raise SizeGuardExceeded(f"product support {total} exceeds {MMOT_SINKHORN_GUARD}")
    cost_t = _resolve_cost(measures, cost)
    signed = cost_t if sense == "min" else -cost_t
    n = len(measures)
    log_w = [np.log(np.clip(m.weights, 1e-300, None)) for m in measures]
    pot = [np.zeros(s) for s in sizes]

    def log_plan():
        g = -signed / epsilon
        for i in range(n):
            shape = [1] * n
            shape[i] = sizes[i]
            g = g + pot[i].reshape(shape)
        return g

    status = "max-iter"
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        for i in range(n):
            g = log_plan()
            axes = tuple(k for k in range(n) if k != i)
            log_marg = logsumexp(g, axis=axes)
            pot[i] = pot[i] + log_w[i] - log_marg
        plan = np.exp(log_plan())
        residual = _marginal_residual(plan, measures)
        if residual < marginal_tol:
            status = "converged"
            break
    plan = np.exp(log_plan())
    residual = _marginal_residual(plan, measures)
    plugin = float(np.sum(cost_t * plan))
    mask = plan > 0
    kl = float(np.sum(plan[mask] * (np.log(plan[mask]) -
                                    sum(np.broadcast_to(log_w[i].reshape([sizes[i] if k == i else 1
                                                                          for k in range(n)]),
                                        sizes)[mask] for i in range(n)))))
    regularized = plugin + (epsilon * kl if sense == "min" else -epsilon * kl)
    return CouplingResult(value=plugin, optimizer=plan, iterations=rounds,
                          gap=abs(regularized - plugin), status=status,
                          meta={"regularized_value": regularized,
                                "marginal_residual": residual, "epsilon": epsilon})


def w2_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Quadratic Wasserstein distance between finitely supported measures."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    d2 = ((mu.points[:, None, :] - nu.points[None, :, :]) ** 2).sum(-1)
    res = mmot_exact([mu, nu], d2, sense="min")
    return math.sqrt(max(res.value, 0.0))


def barycenter_discrete(weights, measures, *, merge_tol: float = 1e-9) -> DiscreteMeasure:
    """Wasserstein barycenter of discrete measures.

    Solves the pairwise-quadratic multimarginal problem exactly, then pushes
    the optimal plan through x -> sum_i w_i x_i; images closer than
    ``merge_tol`` are merged.
    """
    lam = as_weights(weights)
    res = mmot_exact(measures, lam, sense="min")
    if res.status != "converged":
        raise RuntimeError(f"multimarginal solve failed: {res.status}")
    plan = res.optimizer
    pts, _ = _support_arrays(measures)
    idx = np.argwhere(plan > 1e-14)
    images = np.zeros((idx.shape[0], measures[0].dim))
    masses = np.zeros(idx.shape[0])
    for r, cell in enumerate(idx):
        images[r] = sum(lam[i] * pts[i][cell[i]] for i in range(len(measures)))
        masses[r] = plan[tuple(cell)]
    # greedy merge of coincident images
    out_pts, out_w = [], []
    used = np.zeros(len(images), dtype=bool)
    order = np.lexsort(images.T)
    for r in order:
        if used[r]:
            continue
        close = np.linalg.norm(images - images[r], axis=1) <= merge_tol
        close &= ~used
        used |= close
        mass = masses[close].sum()
        out_pts.append((masses[close] @ images[close]) / mass)
        out_w.append(mass)
    w = np.array(out_w)
    return DiscreteMeasure(np.array(out_pts), w / w.sum())


# ---------------------------------------------------------------------------
# Fast path for the discrete supremum with nonnegative 1D cross terms
# ---------------------------------------------------------------------------

def comonotone_cells(measures):
    """Quantile-aligned coupling cells for one-dimensional marginals.

    Returns ``(indices, masses)`` where each row of ``indices`` selects one
    support point per marginal and ``masses`` are the shared quantile slabs.
    """
    n = len(measures)
    orders = [np.argsort(m.points[:, 0], kind="stable") for m in measures]
    weights = [m.weights[o] for m, o in zip(measures, orders)]
    pos = [0] * n
    rem = [w[0] for w in weights]
    cells, masses = [], []
    while True:
        slab = min(rem)
        cells.append(tuple(orders[i][pos[i]] for i in range(n)))
        masses.append(slab)
        done = False
        for i in range(n):
            rem[i] -= slab
            if rem[i] <= 1e-15:
                pos[i] += 1
                if pos[i] >= len(weights[i]):
                    done = True
                else:
                    rem[i] = weights[i][pos[i]]
        if done:
            break
    return np.array(cells), np.array(masses)


def sup_coupling_value(measures, form: QuadraticForm, *, epsilon: float = 0.01) -> float:
    """Supremum of <x, Q x> over couplings of discrete marginals.

    One-dimensional marginals with nonnegative cross blocks use the exact
    comonotone (shared quantile) coupling: each pairwise expectation attains
    its Hoeffding upper bound simultaneously.  Otherwise the exact LP is used
    when the product of supports fits the guard, and Sinkhorn beyond.
    """
    coeff = _scaled_identity_cross(form)
    all_1d = all(m.dim == 1 for m in measures)
    if all_1d and coeff is not None and np.all(coeff >= 0.0):
        cells, masses = comonotone_cells(measures)
        pts = [m.points[:, 0] for m in measures]
        xs = np.stack([pts[i][cells[:, i]] for i in range(len(measures))], axis=1)
        qm = form.matrix
        vals = np.einsum("ri,ij,rj->r", xs, qm, xs)
        return float(vals @ masses)
    total = int(np.prod([m.size for m in measures]))
    if total <= MMOT_EXACT_GUARD:
        return mmot_exact(measures, form, sense="max").value
    return mmot_sinkhorn(measures, form, sense="max", epsilon=epsilon).value
