"""Warm-started combinatorial active-set search for the condensed parametric QP.

Instead of storing an explicit region partition, each query searches the
candidate active sets directly: solve the equality-constrained KKT system for
a candidate, accept when primal feasibility and dual nonnegativity hold, and
otherwise branch by activating violated rows and deactivating rows with
negative multipliers.  A stack of promising candidates (most recent first), a
visited set, and a list of minimal rank-deficient candidates (whose supersets
are all rank deficient and can be pruned wholesale) make the search complete:
if the bounded candidate space is exhausted the problem is infeasible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .lifting import LiftedQP, _theta_vector

__all__ = [
    "ActiveSet",
    "Tolerances",
    "SolveStatus",
    "SolveStats",
    "SolveResult",
    "SolverState",
    "OptimalityReport",
    "kkt_solve",
    "check_optimality",
    "solve",
    "reduce_to_licq",
    "kkt_residuals",
    "iter_candidate_masks",
]


@dataclass(frozen=True)
class ActiveSet:
    """Immutable set of active constraint indices stored as a bitmask.

    Bit ``k`` set means constraint row ``k`` is treated as an equality.
    """

    mask: int = 0

    @classmethod
    def from_indices(cls, indices) -> "ActiveSet":
        m = 0
        for k in indices:
            m |= 1 << int(k)
        return cls(m)

    @classmethod
    def from_hex(cls, text: str) -> "ActiveSet":
        return cls(int(text, 16))

    def indices(self) -> list:
        return _mask_indices(self.mask)

    def add(self, k: int) -> "ActiveSet":
        return ActiveSet(self.mask | (1 << k))

    def remove(self, k: int) -> "ActiveSet":
        return ActiveSet(self.mask & ~(1 << k))

    def contains(self, k: int) -> bool:
        return bool(self.mask >> k & 1)

    def issubset(self, other: "ActiveSet") -> bool:
        return self.mask & other.mask == self.mask

    def __len__(self) -> int:
        return self.mask.bit_count()

    def __iter__(self):
        return iter(self.indices())

    def __str__(self) -> str:
        return hex(self.mask)


def _mask_indices(mask: int) -> list:
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


@dataclass
class Tolerances:
    """Acceptance and rank thresholds of the search.

    ``tol_violation``/``tol_lambda`` are absolute bands already scaled by the
    constraint bounds (see :meth:`for_qp`); ``tol_singular`` is relative to
    the largest eigenvalue of the reduced KKT matrix.  ``max_kkt_solves``
    bounds the work per query; the exhaustive infeasibility certificate is
    only available below that budget.
    """

    tol_violation: float = 1e-9
    tol_lambda: float = 1e-9
    tol_singular: float = 1e-10
    max_kkt_solves: int = 10000

    @classmethod
    def for_qp(cls, qp: LiftedQP, **overrides) -> "Tolerances":
        scale = 1.0 + (np.max(np.abs(qp.W)) if qp.W.size else 0.0)
        kw = dict(tol_violation=1e-9 * scale, tol_lambda=1e-9 * scale)
        kw.update(overrides)
        return cls(**kw)


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class SolveStats:
    candidates_visited: int = 0
    kkt_solves: int = 0
    licq_failures: int = 0
    wall_time: float = 0.0


@dataclass
class SolveResult:
    status: SolveStatus
    active_set: ActiveSet
    u_first: np.ndarray | None
    u_seq: np.ndarray | None
    z_star: np.ndarray | None
    lam: np.ndarray | None
    stats: SolveStats


@dataclass
class SolverState:
    """Mutable search state: candidate stack, visited set, rank-deficiency log."""

    stack: list = field(default_factory=list)
    visited: "_VisitedSet | None" = None
    licq: list = field(default_factory=list)
    stats: SolveStats = field(default_factory=SolveStats)


class _VisitedSet:
    """Membership structure over candidate bitmasks.

    Uses a dense bit array when the index space is small enough (at most
    2^24 candidates) and a hash set of masks otherwise.
    """

    ARRAY_LIMIT = 24

    def __init__(self, n_bits: int, force_hash: bool = False):
        self._array = None
        self._set = None
        if n_bits <= self.ARRAY_LIMIT and not force_hash:
            self._array = bytearray((1 << n_bits) // 8 + 1)
        else:
            self._set = set()

    def add(self, mask: int):
        if self._array is not None:
            self._array[mask >> 3] |= 1 << (mask & 7)
        else:
            self._set.add(mask)

    def contains(self, mask: int) -> bool:
        if self._array is not None:
            return bool(self._array[mask >> 3] >> (mask & 7) & 1)
        return mask in self._set


def _contains_violator(licq: list, mask: int) -> bool:
    return any(l & mask == l for l in licq)


def _licq_insert(licq: list, mask: int):
    # Keep only inclusion-minimal rank-deficient candidates.
    if _contains_violator(licq, mask):
        return
    licq[:] = [l for l in licq if mask & l != mask] + [mask]


def iter_candidate_masks(n_bits: int, max_cardinality: int):
    """All subsets of ``range(n_bits)`` ordered by (cardinality, numeric mask).

    Within one cardinality the masks are produced in increasing numeric order
    (same-popcount successor trick), which fixes the deterministic fallback
    order of the search and of the exhaustive reference.
    """
    yield 0
    limit = 1 << n_bits
    for c in range(1, min(n_bits, max_cardinality) + 1):
        v = (1 << c) - 1
        while v < limit:
            yield v
            t = (v | (v - 1)) + 1
            v = t | ((((t & -t) // (v & -v)) >> 1) - 1)


def kkt_solve(qp: LiftedQP, aset, theta, tol_singular: float = 1e-10):
    """Solve the KKT system of the QP with the candidate rows as equalities.

    Returns ``(z_star, lam)`` where ``lam`` holds the multipliers of the
    candidate rows in ascending index order, or ``None`` when the reduced
    matrix ``G_A H^{-1} G_A^T`` is singular at the relative threshold (the
    linear-independence qualification fails on this candidate).
    """
    mask = aset.mask if isinstance(aset, ActiveSet) else int(aset)
    if mask == 0:
        raise ValueError("candidate active set must be nonempty")
    b = qp.W + qp.S @ _theta_vector(theta)
    return _kkt_solve_mask(qp, mask, b, tol_singular)


def _kkt_solve_mask(qp: LiftedQP, mask: int, b: np.ndarray, tol_singular: float):
    rows = _mask_indices(mask)
    GA = qp.G[rows]
    bA = b[rows]
    Y = qp.solve_H(GA.T)  # H^{-1} G_A^T
    K = GA @ Y
    K = 0.5 * (K + K.T)
    w, U = np.linalg.eigh(K)
    if w[-1] <= 0.0 or w[0] <= tol_singular * w[-1]:
        return None
    lam = -(U @ ((U.T @ bA) / w))
    z = -(Y @ lam)
    # A candidate whose equalities cannot be reproduced numerically is rank
    # deficient for all practical purposes.
    resid = np.max(np.abs(GA @ z - bA))
    if resid > 1e-8 * (1.0 + np.max(np.abs(bA))):
        return None
    return z, lam


@dataclass
class OptimalityReport:
    optimal: bool
    violated: list  # constraint indices, most violated first
    negative: list  # (index, multiplier) pairs, most negative first
    slack: np.ndarray


def check_optimality(qp: LiftedQP, z_star, lam_A, aset, theta, tol: Tolerances | None = None) -> OptimalityReport:
    """Primal/dual acceptance test for a candidate KKT solution.

    Violated rows come back ordered by increasing slack and negative
    multipliers by increasing value, i.e. worst first, with index ties broken
    toward the lower index.
    """
    tol = tol if tol is not None else Tolerances.for_qp(qp)
    z = np.asarray(z_star, float).reshape(-1)
    slack = qp.W + qp.S @ _theta_vector(theta) - qp.G @ z
    mask = aset.mask if isinstance(aset, ActiveSet) else int(aset)
    rows = _mask_indices(mask)
    lam = np.asarray(lam_A, float).reshape(-1)
    violated = sorted(
        (int(k) for k in np.flatnonzero(slack < -tol.tol_violation)),
        key=lambda k: (slack[k], k),
    )
    negative = sorted(
        ((rows[i], float(lam[i])) for i in np.flatnonzero(lam < -tol.tol_lambda)),
        key=lambda kv: (kv[1], kv[0]),
    )
    return OptimalityReport(
        optimal=not violated and not negative,
        violated=violated,
        negative=negative,
        slack=slack,
    )


def _result(qp, status, mask, z, lam_A, stats, theta_vec):
    lam_full = np.zeros(qp.p_tilde)
    u_seq = u_first = z_out = None
    if status is SolveStatus.OPTIMAL:
        rows = _mask_indices(mask)
        if rows:
            lam_full[rows] = lam_A
        u_seq = z - qp.solve_H(qp.F @ theta_vec)
        u_first = u_seq[: qp.n_u]
        z_out = z
    return SolveResult(
        status=status,
        active_set=ActiveSet(mask),
        u_first=u_first,
        u_seq=u_seq,
        z_star=z_out,
        lam=lam_full if status is SolveStatus.OPTIMAL else None,
        stats=stats,
    )


def solve(
    qp: LiftedQP,
    theta,
    warm: ActiveSet | None = None,
    tol: Tolerances | None = None,
    track_visited: bool = True,
) -> SolveResult:
    """Point location by warm-started candidate search.

    Starting from ``warm`` (default: empty set), each evaluated candidate
    either terminates the query or pushes neighbours: supersets activating
    violated rows and subsets dropping rows with negative multipliers, the
    worst offender on top of the stack with removals tried before additions.
    Candidates containing a known rank-deficient subset are skipped.  When the
    stack runs dry the unvisited candidate of smallest cardinality is tried
    next, so termination is exhaustive: ``INFEASIBLE`` is only reported once
    every candidate with cardinality at most ``N * n_u`` has been covered.

    With ``track_visited=False`` the visited bookkeeping and the sequential
    fallback are disabled (the historical fast variant); that mode cannot
    certify infeasibility and relies on the KKT-solve budget to terminate.
    """
    t0 = time.perf_counter()
    theta_vec = _theta_vector(theta)
    tol = tol if tol is not None else Tolerances.for_qp(qp)
    p = qp.p_tilde
    cap = min(qp.n_z, p)
    b = qp.W + qp.S @ theta_vec

    state = SolverState(visited=_VisitedSet(p) if track_visited else None)
    stats = state.stats
    seq = iter_candidate_masks(p, cap) if track_visited else None

    mask = warm.mask if warm is not None else 0
    if mask.bit_count() > cap:
        mask = 0  # oversized warm starts are certainly rank deficient
    first = True

    while True:
        # --- candidate selection ------------------------------------------
        if state.visited is not None:
            while state.visited.contains(mask):
                if state.stack:
                    mask = state.stack.pop()
                else:
                    mask = next(seq, None)
                    while mask is not None and state.visited.contains(mask):
                        mask = next(seq, None)
                    if mask is None:
                        stats.wall_time = time.perf_counter() - t0
                        return _result(qp, SolveStatus.INFEASIBLE, 0, None, None, stats, theta_vec)
                if _contains_violator(state.licq, mask):
                    state.visited.add(mask)
            state.visited.add(mask)
        else:
            if not first:
                while True:
                    if not state.stack:
                        stats.wall_time = time.perf_counter() - t0
                        return _result(qp, SolveStatus.BUDGET_EXHAUSTED, 0, None, None, stats, theta_vec)
                    mask = state.stack.pop()
                    if not _contains_violator(state.licq, mask):
                        break
        first = False
        stats.candidates_visited += 1

        # --- evaluation ---------------------------------------------------
        if mask == 0:
            z = np.zeros(qp.n_z)
            lam_A = np.zeros(0)
        else:
            stats.kkt_solves += 1
            out = _kkt_solve_mask(qp, mask, b, tol.tol_singular)
            if out is None:
                stats.licq_failures += 1
                _licq_insert(state.licq, mask)
                if stats.kkt_solves >= tol.max_kkt_solves:
                    stats.wall_time = time.perf_counter() - t0
                    return _result(qp, SolveStatus.BUDGET_EXHAUSTED, 0, None, None, stats, theta_vec)
                continue
            z, lam_A = out

        slack = b - qp.G @ z
        rows = _mask_indices(mask)
        violated = sorted(
            (int(k) for k in np.flatnonzero(slack < -tol.tol_violation)),
            key=lambda k: (slack[k], k),
        )
        negative = sorted(
            ((rows[i], lam_A[i]) for i in np.flatnonzero(lam_A < -tol.tol_lambda)),
            key=lambda kv: (kv[1], kv[0]),
        )
        if not violated and not negative:
            stats.wall_time = time.perf_counter() - t0
            return _result(qp, SolveStatus.OPTIMAL, mask, z, lam_A, stats, theta_vec)
        if stats.kkt_solves >= tol.max_kkt_solves:
            stats.wall_time = time.perf_counter() - t0
            return _result(qp, SolveStatus.BUDGET_EXHAUSTED, 0, None, None, stats, theta_vec)

        # --- branching ----------------------------------------------------
        # Push in reverse examination order so the worst offender pops first;
        # removals are pushed after additions and therefore pop before them.
        for k in reversed(violated):
            m2 = mask | (1 << k)
            if m2.bit_count() > cap:
                continue
            if state.visited is not None and state.visited.contains(m2):
                continue
            if _contains_violator(state.licq, m2):
                continue
            state.stack.append(m2)
        for k, _lam in reversed(negative):
            m2 = mask & ~(1 << k)
            if state.visited is not None and state.visited.contains(m2):
                continue
            state.stack.append(m2)


def kkt_residuals(qp: LiftedQP, result: SolveResult, theta) -> dict:
    """Certificate bundle of an optimal result.

    Returns stationarity norm, the worst active-row equality error, and the
    minimum slack and multiplier.
    """
    theta_vec = _theta_vector(theta)
    z = result.z_star
    rows = result.active_set.indices()
    GA = qp.G[rows]
    b = qp.W + qp.S @ theta_vec
    stationarity = np.linalg.norm(qp.cost.H @ z + GA.T @ result.lam[rows]) if rows else np.linalg.norm(qp.cost.H @ z)
    eq = float(np.max(np.abs(GA @ z - b[rows]))) if rows else 0.0
    slack = b - qp.G @ z
    return {
        "stationarity": float(stationarity),
        "active_equality": eq,
        "min_slack": float(np.min(slack)) if slack.size else 0.0,
        "min_lambda": float(np.min(result.lam)) if result.lam.size else 0.0,
        "z_norm": float(np.linalg.norm(z)),
    }


# ---------------------------------------------------------------------------
# Reduction of a degenerate sufficient active set to one satisfying the
# linear-independence qualification.
# ---------------------------------------------------------------------------

def _feasible_point(Kn: np.ndarray, bf: np.ndarray) -> np.ndarray:
    """Any point of the polyhedron ``{xi : Kn xi >= bf}`` (known nonempty)."""
    q = Kn.shape[1]
    if np.all(bf <= 0):
        return np.zeros(q)
    res = linprog(
        c=np.zeros(q),
        A_ub=-Kn,
        b_ub=-bf,
        bounds=[(None, None)] * q,
        method="highs",
    )
    if not res.success:
        raise ValueError("candidate set is not sufficient: multiplier polyhedron is empty")
    return np.asarray(res.x, float)


def _walk_to_corner(Kn: np.ndarray, bf: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Move a feasible point of ``{Kn xi >= bf}`` to a vertex.

    The constraint matrix has orthonormal columns, so the polyhedron is
    pointed and each ray step makes one more independent row tight.
    """
    m, q = Kn.shape
    scale = 1.0 + float(np.max(np.abs(bf))) if bf.size else 1.0
    tol_tight = 1e-9 * scale
    for _ in range(q + 1):
        s = Kn @ xi - bf
        tight = s <= tol_tight
        At = Kn[tight]
        # Null direction of the tight rows (full space when none are tight).
        if At.shape[0]:
            _u, sv, vh = np.linalg.svd(At)
            rank = int(np.sum(sv > 1e-12 * (sv[0] if sv.size else 1.0)))
            if rank >= q:
                return xi
            d = vh[rank]
        else:
            d = np.zeros(q)
            d[0] = 1.0
        step = Kn @ d
        blocking = (~tight) & (step < -1e-12)
        if not np.any(blocking):
            d = -d
            step = -step
            blocking = (~tight) & (step < -1e-12)
            if not np.any(blocking):
                raise ValueError("failed to locate a corner of the multiplier polyhedron")
        t = np.min(s[blocking] / -step[blocking])
        xi = xi + t * d
    return xi


def reduce_to_licq(qp: LiftedQP, aset: ActiveSet, theta, tol_singular: float = 1e-10) -> ActiveSet:
    """Shrink a sufficient but degenerate active set until it satisfies LICQ.

    In every round the reduced KKT matrix is eigendecomposed; its null-space
    dimension ``q`` parametrizes the set of valid multipliers as a pointed
    polyhedron, a corner of which has at least ``q`` vanishing multipliers.
    Dropping ``q`` independent tight rows keeps the candidate sufficient with
    the same minimizer, and the cardinality strictly decreases, so the loop
    terminates.  Raises ``ValueError`` when the input set is not sufficient.
    """
    theta_vec = _theta_vector(theta)
    b = qp.W + qp.S @ theta_vec
    mask = aset.mask if isinstance(aset, ActiveSet) else int(aset)

    while mask:
        rows = _mask_indices(mask)
        GA = qp.G[rows]
        bA = b[rows]
        Y = qp.solve_H(GA.T)
        K = GA @ Y
        K = 0.5 * (K + K.T)
        w, U = np.linalg.eigh(K)
        wmax = max(float(w[-1]), 0.0)
        null = w <= tol_singular * wmax if wmax > 0 else np.ones_like(w, dtype=bool)
        q = int(np.sum(null))
        if q == 0:
            break
        R = U[:, ~null]
        Kn = U[:, null]
        bf = R @ ((R.T @ bA) / w[~null]) if R.size else np.zeros(len(rows))
        xi = _walk_to_corner(Kn, bf, _feasible_point(Kn, bf))
        s = Kn @ xi - bf
        order = np.argsort(s)
        # q independent tight rows: greedy pivoted selection among the
        # tightest rows of the null-space block.
        tight_idx = [int(i) for i in order if s[i] <= 1e-8 * (1.0 + abs(float(bf[i])))]
        chosen = []
        basis = np.zeros((0, q))
        for i in tight_idx:
            candidate = np.vstack([basis, Kn[i]])
            if np.linalg.matrix_rank(candidate, tol=1e-10) > basis.shape[0]:
                basis = candidate
                chosen.append(i)
            if len(chosen) == q:
                break
        if len(chosen) < q:
            raise ValueError("candidate set is not sufficient: corner search failed")
        for i in chosen:
            mask &= ~(1 << rows[i])

    # Verify the reduced candidate actually certifies the minimizer.
    if mask:
        out = _kkt_solve_mask(qp, mask, b, tol_singular)
        if out is None:
            raise ValueError("reduction failed to reach a rank-complete candidate")
        z, lam_A = out
        scale = 1.0 + (np.max(np.abs(qp.W)) if qp.W.size else 0.0)
        slack = b - qp.G @ z
        if np.min(slack) < -1e-8 * scale or (lam_A.size and np.min(lam_A) < -1e-8 * scale):
            raise ValueError("candidate set is not sufficient")
    else:
        slack = b
        if slack.size and np.min(slack) < 0:
            raise ValueError("candidate set is not sufficient")
    return ActiveSet(mask)
