"""Reference solvers for desk-scale QPs.

Two independent routes to the same minimizer: brute-force enumeration of the
candidate active sets in a fixed deterministic order, and projected cyclic
coordinate ascent on the dual.  Both are meant for cross-checking the search
in :mod:`.solver` at small sizes, not for production use.
"""
from __future__ import annotations

import numpy as np

from .lifting import LiftedQP, _theta_vector
from .solver import (
    ActiveSet,
    SolveResult,
    SolveStats,
    SolveStatus,
    Tolerances,
    _kkt_solve_mask,
    _mask_indices,
    iter_candidate_masks,
)

__all__ = ["enumerate_active_sets", "dual_ascent"]


def enumerate_active_sets(qp: LiftedQP, theta, tol: Tolerances | None = None, max_constraints: int = 20) -> SolveResult:
    """First acceptable candidate in (cardinality, numeric mask) order.

    Iterates every candidate with cardinality up to the decision dimension;
    rank-deficient candidates are skipped.  Returns an infeasibility result
    when no candidate is accepted.  Guarded against index spaces larger than
    ``2^max_constraints``.
    """
    p = qp.p_tilde
    if p > max_constraints:
        raise ValueError(f"enumeration over 2^{p} candidates refused (limit 2^{max_constraints})")
    tol = tol if tol is not None else Tolerances.for_qp(qp)
    theta_vec = _theta_vector(theta)
    b = qp.W + qp.S @ theta_vec
    stats = SolveStats()
    for mask in iter_candidate_masks(p, min(qp.n_z, p)):
        stats.candidates_visited += 1
        if mask == 0:
            z = np.zeros(qp.n_z)
            lam_A = np.zeros(0)
        else:
            stats.kkt_solves += 1
            out = _kkt_solve_mask(qp, mask, b, tol.tol_singular)
            if out is None:
                stats.licq_failures += 1
                continue
            z, lam_A = out
        slack = b - qp.G @ z
        if (slack.size == 0 or np.min(slack) >= -tol.tol_violation) and (
            lam_A.size == 0 or np.min(lam_A) >= -tol.tol_lambda
        ):
            lam_full = np.zeros(p)
            rows = _mask_indices(mask)
            if rows:
                lam_full[rows] = lam_A
            u_seq = z - qp.solve_H(qp.F @ theta_vec)
            return SolveResult(
                status=SolveStatus.OPTIMAL,
                active_set=ActiveSet(mask),
                u_first=u_seq[: qp.n_u],
                u_seq=u_seq,
                z_star=z,
                lam=lam_full,
                stats=stats,
            )
    return SolveResult(
        status=SolveStatus.INFEASIBLE,
        active_set=ActiveSet(0),
        u_first=None,
        u_seq=None,
        z_star=None,
        lam=None,
        stats=stats,
    )


def dual_ascent(qp: LiftedQP, theta, tol: float = 1e-10, max_iter: int = 100000) -> np.ndarray:
    """Minimizer via projected cyclic coordinate ascent on the dual.

    Maximizes ``-<K lam, lam>/2 - <lam, b>`` over ``lam >= 0`` with
    ``K = G H^{-1} G^T`` and ``b = W + S theta`` by exact coordinate updates
    ``lam_k <- max(0, lam_k - (K lam + b)_k / K_kk)``, cycling until the
    projected-gradient residual drops below ``tol``.  Needs a strictly
    admissible point to exist; raises ``RuntimeError`` on non-convergence.
    Returns ``z``; the primal iterate is ``z = -H^{-1} G^T lam`` throughout.
    """
    theta_vec = _theta_vector(theta)
    b = qp.W + qp.S @ theta_vec
    p = qp.p_tilde
    if p == 0:
        return np.zeros(qp.n_z)
    K = qp.G @ qp.solve_H(qp.G.T)
    K = 0.5 * (K + K.T)
    diag = np.diag(K).copy()
    lam = np.zeros(p)
    v = np.zeros(p)  # K @ lam, maintained incrementally
    tiny = 1e-14 * (np.max(diag) if p else 1.0)
    for _ in range(max_iter):
        for k in range(p):
            if diag[k] <= tiny:
                continue
            new = lam[k] - (v[k] + b[k]) / diag[k]
            if new < 0.0:
                new = 0.0
            delta = new - lam[k]
            if delta != 0.0:
                v += K[:, k] * delta
                lam[k] = new
        slack = b + v
        residual = np.max(np.abs(lam - np.maximum(0.0, lam - slack)))
        if residual <= tol:
            return -qp.solve_H(qp.G.T @ lam)
    raise RuntimeError(f"dual ascent did not converge within {max_iter} cycles (residual {residual:.3e})")
