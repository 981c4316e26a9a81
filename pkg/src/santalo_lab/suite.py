"""End-to-end inequality checkers.

Each checker evaluates both sides of one transport-entropy inequality and
returns an :class:`InequalityReport`.  Gaussian inputs go through exact
closed forms; discrete inputs go through the exact multimarginal solvers,
with relative entropy against the standard Gaussian computed under the
smoothed-density convention (Gaussian kernel, bandwidth two cell widths),
flagged in the report metadata.
"""

from __future__ import annotations

import math

import numpy as np

from . import grids
from .couplings import (DiscreteMeasure, QuadraticForm, max_coupling_gaussian,
                        mmot_exact, sup_coupling_value, w2_discrete,
                        barycenter_discrete)
from .gaussians import (Gaussian, barycenter_gaussian, gaussian_entropy,
                        relative_entropy_gaussian, w2_gaussian)
from .reports import InequalityReport
from .sharp_constant import encode_barycenter_form
from .utils import as_weights

GAUSSIAN_TOL = 1e-8
GRID_TOL = 2e-2
CENTERING_SLACK = 1e-6


def _recenter(measures):
    """Recenter inputs with |mean| <= 1e-6 (noting it); reject larger means."""
    out = []
    recentered = False
    for i, m in enumerate(measures):
        if isinstance(m, Gaussian):
            drift = float(np.abs(m.mean).max(initial=0.0))
            if drift > CENTERING_SLACK:
                raise ValueError(f"measure {i} is not centered (|mean| = {drift:.3e})")
            if drift > 0:
                recentered = True
                m = Gaussian.centered(m.cov)
        elif isinstance(m, DiscreteMeasure):
            mean = m.mean()
            drift = float(np.abs(mean).max(initial=0.0))
            if drift > CENTERING_SLACK:
                raise ValueError(f"measure {i} is not centered (|mean| = {drift:.3e})")
            if drift > 0:
                recentered = True
                m = DiscreteMeasure(m.points - mean, m.weights)
        else:
            raise TypeError("measures must be Gaussian or DiscreteMeasure")
        out.append(m)
    return out, recentered


def _all_gaussian(measures) -> bool:
    return all(isinstance(m, Gaussian) for m in measures)


def _relative_entropies(measures):
    """D(mu || gamma) per measure; discrete inputs use the smoothed convention."""
    vals, smoothed = [], False
    for m in measures:
        if isinstance(m, Gaussian):
            vals.append(relative_entropy_gaussian(m))
        else:
            smoothed = True
            vals.append(grids.relative_entropy_gamma(grids.from_discrete(m)))
    return np.array(vals), smoothed


def _barycenter_cross_max(measures, lam) -> float:
    """max over couplings of sum_{i<j} w_i w_j E<X_i, X_j> (closed/SDP path)."""
    d = measures[0].dim
    form = encode_barycenter_form(lam, d).form
    covs = [g.cov for g in measures]
    return max_coupling_gaussian(form, covs).value


def _pairwise_infimum(measures, lam) -> float:
    """inf over couplings of E sum_{i<j} w_i w_j |X_i - X_j|^2."""
    lam = np.asarray(lam, dtype=float)
    if _all_gaussian(measures):
        traces = np.array([float(np.trace(g.cov)) for g in measures])
        fixed = float(np.sum(lam * (1.0 - lam) * traces))
        return fixed - 2.0 * _barycenter_cross_max(measures, lam)
    res = mmot_exact(measures, lam, sense="min")
    return res.value


def talagrand_barycenter_check(measures, lam, *, tol: float = None) -> InequalityReport:
    """min_mu sum_i w_i W2(mu_i, mu)^2 <= 2 sum_i w_i (1 - w_i) D(mu_i || gamma)."""
    lam = as_weights(lam)
    measures, recentered = _recenter(measures)
    rel, smoothed = _relative_entropies(measures)
    rhs = 2.0 * float(np.sum(lam * (1.0 - lam) * rel))
    if _all_gaussian(measures):
        bary = barycenter_gaussian(lam, measures)
        lhs = float(sum(w * w2_gaussian(g, bary) ** 2 for w, g in zip(lam, measures)))
    else:
        bary = barycenter_discrete(lam, measures)
        lhs = float(sum(w * w2_discrete(m, bary) ** 2 for w, m in zip(lam, measures)))
    if tol is None:
        tol = GAUSSIAN_TOL if _all_gaussian(measures) else GRID_TOL
    return InequalityReport.from_sides(
        "talagrand-barycenter", lhs, rhs, tol,
        smoothed_relative_entropy=smoothed, recentered=recentered)


def multimarginal_form_check(measures, lam, *, tol: float = None) -> InequalityReport:
    """(1/2) inf E sum_{i<j} w_i w_j |X_i - X_j|^2 <= sum_i w_i (1 - w_i) D(mu_i||gamma)."""
    lam = as_weights(lam)
    measures, recentered = _recenter(measures)
    rel, smoothed = _relative_entropies(measures)
    rhs = float(np.sum(lam * (1.0 - lam) * rel))
    lhs = 0.5 * _pairwise_infimum(measures, lam)
    if tol is None:
        tol = GAUSSIAN_TOL if _all_gaussian(measures) else GRID_TOL
    return InequalityReport.from_sides(
        "multimarginal-talagrand", lhs, rhs, tol,
        smoothed_relative_entropy=smoothed, recentered=recentered)


def equivalence_check(measures, lam, *, tol: float = None) -> InequalityReport:
    """Barycenter problem equals the pairwise multimarginal problem.

    lhs = min_mu sum w_i W2(mu_i, mu)^2 evaluated at the computed barycenter,
    rhs = inf over couplings of the pairwise quadratic cost; the two agree
    exactly, so the expected verdict is ``saturated``.
    """
    lam = as_weights(lam)
    measures, recentered = _recenter(measures)
    if _all_gaussian(measures):
        bary = barycenter_gaussian(lam, measures)
        lhs = float(sum(w * w2_gaussian(g, bary) ** 2 for w, g in zip(lam, measures)))
    else:
        bary = barycenter_discrete(lam, measures)
        lhs = float(sum(w * w2_discrete(m, bary) ** 2 for w, m in zip(lam, measures)))
    rhs = _pairwise_infimum(measures, lam)
    if tol is None:
        tol = GAUSSIAN_TOL if _all_gaussian(measures) else 1e-9
    return InequalityReport.from_sides(
        "barycenter-multimarginal-equivalence", lhs, rhs, tol,
        recentered=recentered, equality_expected=True)


def symm_talagrand_check(mu, nu, *, tol: float = None) -> InequalityReport:
    """(1/2) W2(mu, nu)^2 <= D(mu || gamma) + D(nu || gamma).

    Equality holds exactly when the covariances are mutually inverse; the
    report flags when the inputs sit in that case.
    """
    (mu, nu), recentered = _recenter([mu, nu])
    if _all_gaussian([mu, nu]):
        lhs = 0.5 * w2_gaussian(mu, nu) ** 2
        rel = [relative_entropy_gaussian(mu), relative_entropy_gaussian(nu)]
        smoothed = False
        try:
            inv = np.linalg.inv(mu.cov)
            scale = max(float(np.abs(inv).max()), 1.0)
            equality_case = bool(np.abs(nu.cov - inv).max() <= 1e-8 * scale)
        except np.linalg.LinAlgError:
            equality_case = False
    else:
        lhs = 0.5 * w2_discrete(mu, nu) ** 2
        rel, smoothed = _relative_entropies([mu, nu])
        equality_case = False
    rhs = float(rel[0] + rel[1])
    if tol is None:
        tol = GAUSSIAN_TOL if _all_gaussian([mu, nu]) else GRID_TOL
    return InequalityReport.from_sides(
        "symmetrized-talagrand", lhs, rhs, tol,
        equality_case_expected=equality_case,
        smoothed_relative_entropy=smoothed, recentered=recentered)


def displacement_convexity_check(measures, lam, *, tol: float = None) -> InequalityReport:
    """sum_i w_i D(mu_i||gamma) >= D(bary||gamma) + (1/2) inf pairwise cost."""
    lam = as_weights(lam)
    measures, recentered = _recenter(measures)
    rel, smoothed = _relative_entropies(measures)
    rhs = float(np.sum(lam * rel))
    if _all_gaussian(measures):
        bary = barycenter_gaussian(lam, measures)
        bary_rel = relative_entropy_gaussian(bary)
    else:
        bary = barycenter_discrete(lam, measures)
        bary_rel = grids.relative_entropy_gamma(grids.from_discrete(bary))
    lhs = float(bary_rel + 0.5 * _pairwise_infimum(measures, lam))
    if tol is None:
        tol = GAUSSIAN_TOL if _all_gaussian(measures) else GRID_TOL
    return InequalityReport.from_sides(
        "barycenter-displacement-convexity", lhs, rhs, tol,
        smoothed_relative_entropy=smoothed, recentered=recentered)


def quadratic_identity_check(lam, probes) -> float:
    """Max residual of the weight-splitting identity for the pairwise cost.

    For weights w_1..w_{n+1} and points x_1..x_{n+1}:
    sum_{i<j<=n+1} w_i w_j |x_i - x_j|^2
      = (1 - w_{n+1}) w_{n+1} |x_{n+1} - xbar|^2
        + (1 - w_{n+1}) sum_{i<j<=n} w'_i w'_j |x_i - x_j|^2,
    with w'_i = w_i / (1 - w_{n+1}) and xbar = sum_{i<=n} w'_i x_i.
    """
    lam = as_weights(lam)
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 2:
        probes = probes[None, :, :]
    if probes.shape[1] != lam.size:
        raise ValueError("each probe needs one point per weight")
    n1 = lam.size
    lam_bar = 1.0 - lam[-1]
    lam_prime = lam[:-1] / lam_bar
    worst = 0.0
    for xs in probes:
        lhs = sum(lam[i] * lam[j] * float(np.sum((xs[i] - xs[j]) ** 2))
                  for i in range(n1) for j in range(i + 1, n1))
        xbar = np.einsum("i,id->d", lam_prime, xs[:-1])
        rhs = lam_bar * lam[-1] * float(np.sum((xs[-1] - xbar) ** 2))
        rhs += lam_bar * sum(lam_prime[i] * lam_prime[j] * float(np.sum((xs[i] - xs[j]) ** 2))
                             for i in range(n1 - 1) for j in range(i + 1, n1 - 1))
        scale = max(1.0, abs(lhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def entropy_inequality_check(measures, c, form: QuadraticForm, d_constant: float,
                             *, tol: float = None) -> InequalityReport:
    """sum_i c_i h(mu_i) <= sup-coupling <x, Q x> - <tau, Q tau> + D.

    The mean correction <tau, Q tau> makes the deficit invariant under
    translating the inputs.  Gaussian inputs use closed forms (exact
    invariance); grid inputs use grid entropy and the discrete coupling
    supremum over the actual (possibly shifted) supports.
    """
    c = [float(v) for v in c]
    if len(c) != len(measures) or len(measures) != form.n:
        raise ValueError("need one coefficient and one measure per block")
    if all(isinstance(m, Gaussian) for m in measures):
        tau = np.concatenate([m.mean for m in measures])
        tau_corr = float(tau @ form.matrix @ tau)
        sup_c = max_coupling_gaussian(form, [m.cov for m in measures]).value + tau_corr
        ent = float(sum(ci * gaussian_entropy(m) for ci, m in zip(c, measures)))
        mode = "gaussian"
    elif all(isinstance(m, grids.GridMeasure) for m in measures):
        tau = np.concatenate([grids.grid_moments(m)[0] for m in measures])
        tau_corr = float(tau @ form.matrix @ tau)
        discretes = [grids.to_discrete(m, weight_floor=1e-300) for m in measures]
        sup_c = sup_coupling_value(discretes, form)
        ent = float(sum(ci * grids.grid_entropy(m) for ci, m in zip(c, measures)))
        mode = "grid"
    else:
        raise TypeError("measures must be all Gaussian or all GridMeasure")
    rhs = sup_c - tau_corr + float(d_constant)
    if tol is None:
        tol = 2e-3 if mode == "gaussian" else GRID_TOL
    return InequalityReport.from_sides(
        "multimarginal-entropy-inequality", ent, rhs, tol,
        coupling=sup_c, mean_correction=tau_corr, mode=mode)


def induction_chain_slacks(measures, lam) -> dict:
    """Per-step slacks of the four-inequality chain behind the multimarginal bound.

    For Gaussian inputs returns the slacks of: restriction to the
    barycenter-structured coupling, the two-measure symmetrized bound applied
    to (mu_{n+1}, bary), displacement convexity with the renormalized weights,
    and the n-marginal inequality (induction hypothesis).  Each is nonnegative
    and they sum to the full deficit.
    """
    lam = as_weights(lam)
    measures, _ = _recenter(measures)
    if not _all_gaussian(measures):
        raise TypeError("chain decomposition is implemented for Gaussian inputs")
    n1 = lam.size
    if n1 < 3:
        raise ValueError("need at least three marginals to split off one")
    lam_bar = 1.0 - lam[-1]
    lam_prime = lam[:-1] / lam_bar
    head = measures[:-1]
    tail = measures[-1]
    bary = barycenter_gaussian(lam_prime, head)

    inf_full = _pairwise_infimum(measures, lam)
    inf_head = _pairwise_infimum(head, lam_prime)
    w2_tail = w2_gaussian(tail, bary) ** 2
    rel = np.array([relative_entropy_gaussian(g) for g in measures])
    rel_bary = relative_entropy_gaussian(bary)

    bound1 = lam_bar * lam[-1] * w2_tail + lam_bar * inf_head
    slack_restrict = 0.5 * (bound1 - inf_full)
    slack_symmetrized = lam_bar * lam[-1] * (rel[-1] + rel_bary) - 0.5 * lam_bar * lam[-1] * w2_tail
    disp = float(np.sum(lam_prime * rel[:-1])) - rel_bary - 0.5 * inf_head
    slack_displacement = lam_bar * lam[-1] * disp
    induct = float(np.sum(lam_prime * (1.0 - lam_prime) * rel[:-1])) - 0.5 * inf_head
    slack_induction = lam_bar * (lam_bar - lam[-1]) * 0.0 + lam_bar ** 2 * induct
    total_deficit = float(np.sum(lam * (1.0 - lam) * rel)) - 0.5 * inf_full
    return {
        "restriction": float(slack_restrict),
        "symmetrized": float(slack_symmetrized),
        "displacement": float(slack_displacement),
        "induction": float(slack_induction),
        "total_deficit": total_deficit,
    }
