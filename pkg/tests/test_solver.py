"""Active-set search: hand traces, oracle cross-checks, degeneracy, budgets."""
import numpy as np
import pytest

from conftest import random_feasible_query
from rfmpc import lifting, oracle, solver
from rfmpc.lifting import LiftedQP
from rfmpc.solver import (
    ActiveSet,
    SolveStatus,
    Tolerances,
    iter_candidate_masks,
    kkt_residuals,
    kkt_solve,
    reduce_to_licq,
)


def halfspace_qp(rows, bounds):
    """min z^2/2 over scalar z subject to G z <= W row-wise."""
    G = np.array(rows, float).reshape(-1, 1)
    W = np.asarray(bounds, float)
    return LiftedQP.from_matrices(
        H=1.0, F=[[0.0]], G=G, S=np.zeros((len(W), 1)), W=W
    )


class TestActiveSet:
    def test_bitmask_round_trip(self):
        a = ActiveSet.from_indices([0, 3, 5])
        assert a.mask == 0b101001
        assert a.indices() == [0, 3, 5]
        assert len(a) == 3
        assert str(a) == "0x29"
        assert ActiveSet.from_hex("0x29") == a

    def test_set_operations(self):
        a = ActiveSet.from_indices([1, 2])
        assert a.add(0).indices() == [0, 1, 2]
        assert a.remove(2).indices() == [1]
        assert a.contains(1) and not a.contains(0)
        assert ActiveSet.from_indices([1]).issubset(a)
        assert not a.issubset(ActiveSet.from_indices([1]))
        assert list(a) == [1, 2]


class TestCandidateOrder:
    def test_cardinality_then_numeric(self):
        masks = list(iter_candidate_masks(4, 2))
        assert masks[0] == 0
        assert masks[1:5] == [0b0001, 0b0010, 0b0100, 0b1000]
        assert masks[5:] == [0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]
        assert len(masks) == 1 + 4 + 6

    def test_cap_respected(self):
        assert max(m.bit_count() for m in iter_candidate_masks(5, 3)) == 3


class TestHandTraces:
    def test_single_halfspace(self):
        # min z^2/2 s.t. z >= 1: the origin violates, one activation fixes it.
        qp = halfspace_qp([-1.0], [-1.0])
        res = solver.solve(qp, np.zeros(1))
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, [1.0])
        np.testing.assert_allclose(res.lam, [1.0])
        assert res.active_set.indices() == [0]
        assert res.stats.candidates_visited == 2
        assert res.stats.kkt_solves == 1

    def test_duplicated_halfspace(self):
        # z >= 1 twice: the pair is rank deficient and must be pruned, not
        # accepted; either single row certifies the same minimizer.
        qp = halfspace_qp([-1.0, -1.0], [-1.0, -1.0])
        res = solver.solve(qp, np.zeros(1))
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, [1.0])
        assert len(res.active_set) == 1

    def test_interior_optimum_is_free(self):
        qp = halfspace_qp([1.0], [1.0])  # z <= 1, origin feasible
        res = solver.solve(qp, np.zeros(1))
        assert res.status is SolveStatus.OPTIMAL
        assert res.active_set.mask == 0
        assert res.stats.kkt_solves == 0
        np.testing.assert_allclose(res.z_star, [0.0])

    def test_infeasible_pair(self):
        # z <= -1 and z >= 1 cannot hold together.
        qp = halfspace_qp([1.0, -1.0], [-1.0, -1.0])
        res = solver.solve(qp, np.zeros(1))
        assert res.status is SolveStatus.INFEASIBLE
        assert res.z_star is None

    def test_parameter_moves_the_bound(self):
        # Same geometry as the packaged corner instance: z >= -theta_1.
        qp = LiftedQP.from_matrices(
            H=1.0, F=[[0.0, 0.0]], G=[[-1.0]], S=[[1.0, 0.0]], W=[0.0]
        )
        res = solver.solve(qp, np.array([-1.0, 0.0]))
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, [1.0])
        res = solver.solve(qp, np.array([2.0, 0.0]))
        assert res.active_set.mask == 0


class TestKktSolve:
    def test_rejects_empty_candidate(self):
        qp = halfspace_qp([-1.0], [-1.0])
        with pytest.raises(ValueError, match="nonempty"):
            kkt_solve(qp, ActiveSet(0), np.zeros(1))

    def test_multipliers_and_minimizer(self):
        qp = halfspace_qp([-1.0], [-1.0])
        z, lam = kkt_solve(qp, ActiveSet.from_indices([0]), np.zeros(1))
        np.testing.assert_allclose(z, [1.0])
        np.testing.assert_allclose(lam, [1.0])

    def test_singular_candidate_returns_none(self):
        qp = halfspace_qp([-1.0, -1.0], [-1.0, -1.0])
        assert kkt_solve(qp, ActiveSet.from_indices([0, 1]), np.zeros(1)) is None


class TestWarmStart:
    def test_exact_warm_start_is_one_solve(self):
        qp = halfspace_qp([-1.0], [-1.0])
        cold = solver.solve(qp, np.zeros(1))
        warm = solver.solve(qp, np.zeros(1), warm=cold.active_set)
        assert warm.status is SolveStatus.OPTIMAL
        assert warm.stats.candidates_visited == 1
        assert warm.stats.kkt_solves == 1
        np.testing.assert_allclose(warm.z_star, cold.z_star)

    def test_stale_warm_start_recovers(self):
        rng = np.random.default_rng(123)
        _, qp, theta, ref = random_feasible_query(rng, n_x=3, n_u=2, N=2,
                                                  rows_per_stage=2, p_hat=1)
        wrong = ActiveSet.from_indices([qp.p_tilde - 1])
        res = solver.solve(qp, theta, warm=wrong)
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, ref.z_star, atol=1e-8)

    def test_oversized_warm_start_reset(self):
        qp = halfspace_qp([-1.0, 1.0], [-1.0, 2.0])
        too_big = ActiveSet.from_indices([0, 1])  # cap is one active row here
        res = solver.solve(qp, np.zeros(1), warm=too_big)
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, [1.0])


class TestOracleCrossCheck:
    def test_random_instances_match_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(30):
            _, qp, theta, ref = random_feasible_query(rng)
            res = solver.solve(qp, theta)
            assert res.status is SolveStatus.OPTIMAL
            np.testing.assert_allclose(res.z_star, ref.z_star, atol=1e-8)
            np.testing.assert_allclose(res.u_seq, ref.u_seq, atol=1e-8)

    def test_untracked_variant_agrees(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            _, qp, theta, ref = random_feasible_query(rng)
            res = solver.solve(qp, theta, track_visited=False)
            assert res.status is SolveStatus.OPTIMAL
            np.testing.assert_allclose(res.z_star, ref.z_star, atol=1e-8)

    def test_certificates_on_optimal_solves(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            _, qp, theta, _ = random_feasible_query(rng)
            res = solver.solve(qp, theta)
            cert = kkt_residuals(qp, res, theta)
            assert cert["stationarity"] <= 1e-8 * (1.0 + cert["z_norm"])
            assert cert["active_equality"] <= 1e-8
            assert cert["min_slack"] >= -1e-9 * (1.0 + np.max(np.abs(qp.W)))
            assert cert["min_lambda"] >= -1e-9 * (1.0 + np.max(np.abs(qp.W)))


class TestDegeneracy:
    def append_scaled_copy(self, qp, row, alpha):
        G = np.vstack([qp.G, alpha * qp.G[row]])
        S = np.vstack([qp.S, alpha * qp.S[row]])
        W = np.append(qp.W, alpha * qp.W[row])
        return LiftedQP.from_matrices(
            H=qp.H, F=qp.F, G=G, S=S, W=W, N=qp.N, n_x=qp.n_x, n_u=qp.n_u
        )

    def test_duplicated_active_row(self):
        rng = np.random.default_rng(7)
        found = 0
        while found < 5:
            _, qp, theta, ref = random_feasible_query(rng)
            active = ref.active_set.indices()
            if not active:
                continue
            found += 1
            degenerate = self.append_scaled_copy(qp, active[0], 1.0)
            res = solver.solve(degenerate, theta)
            assert res.status is SolveStatus.OPTIMAL
            np.testing.assert_allclose(res.z_star, ref.z_star, atol=1e-8)
            # The reported set itself satisfies the rank qualification.
            assert kkt_solve(degenerate, res.active_set, theta) is not None
            assert res.stats.licq_failures >= 0

    def test_reduction_recovers_licq_subset(self):
        rng = np.random.default_rng(8)
        found = 0
        while found < 5:
            _, qp, theta, ref = random_feasible_query(rng)
            active = ref.active_set.indices()
            if not active:
                continue
            found += 1
            degenerate = self.append_scaled_copy(qp, active[0], 2.0)
            fat = ref.active_set.add(degenerate.p_tilde - 1)
            assert kkt_solve(degenerate, fat, theta) is None  # genuinely rank deficient
            reduced = reduce_to_licq(degenerate, fat, theta)
            out = kkt_solve(degenerate, reduced, theta)
            assert out is not None
            np.testing.assert_allclose(out[0], ref.z_star, atol=1e-8)

    def test_reduction_rejects_nonsufficient_set(self):
        qp = halfspace_qp([-1.0, 1.0], [-1.0, 2.0])
        bogus = ActiveSet.from_indices([1])  # inactive at the optimum, lambda < 0
        with pytest.raises(ValueError, match="not sufficient"):
            reduce_to_licq(qp, bogus, np.zeros(1))

    def test_reduction_of_clean_set_is_identity(self):
        qp = halfspace_qp([-1.0], [-1.0])
        reduced = reduce_to_licq(qp, ActiveSet.from_indices([0]), np.zeros(1))
        assert reduced.indices() == [0]


class TestBudget:
    def coupled_pair(self):
        # Both rows are active at the optimum but a single activation
        # leaves the other violated, so at least two KKT solves are needed.
        return LiftedQP.from_matrices(
            H=np.eye(2),
            F=np.zeros((2, 1)),
            G=[[1.0, 1.0], [1.0, 0.0]],
            S=np.zeros((2, 1)),
            W=[-1.0, -1.0],
        )

    def test_exhaustion_reported(self):
        qp = self.coupled_pair()
        tol = Tolerances.for_qp(qp, max_kkt_solves=1)
        res = solver.solve(qp, np.zeros(1), tol=tol)
        assert res.status is SolveStatus.BUDGET_EXHAUSTED
        assert res.z_star is None
        assert res.stats.kkt_solves == 1

    def test_coupled_pair_solves_with_budget(self):
        qp = self.coupled_pair()
        res = solver.solve(qp, np.zeros(1))
        assert res.status is SolveStatus.OPTIMAL
        np.testing.assert_allclose(res.z_star, [-1.0, 0.0], atol=1e-10)
        assert res.stats.kkt_solves >= 2

    def test_zero_budget_still_accepts_interior(self):
        qp = halfspace_qp([1.0], [1.0])
        tol = Tolerances.for_qp(qp, max_kkt_solves=0)
        res = solver.solve(qp, np.zeros(1), tol=tol)
        assert res.status is SolveStatus.OPTIMAL

    def test_untracked_variant_cannot_certify_infeasibility(self):
        qp = halfspace_qp([1.0, -1.0], [-1.0, -1.0])
        res = solver.solve(qp, np.zeros(1), track_visited=False)
        assert res.status is SolveStatus.BUDGET_EXHAUSTED


class TestTolerances:
    def test_scaling_with_bounds(self):
        qp = halfspace_qp([1.0], [9.0])
        tol = Tolerances.for_qp(qp)
        assert tol.tol_violation == pytest.approx(1e-8)
        assert tol.tol_lambda == pytest.approx(1e-8)

    def test_overrides(self):
        qp = halfspace_qp([1.0], [9.0])
        tol = Tolerances.for_qp(qp, tol_violation=1e-6, max_kkt_solves=5)
        assert tol.tol_violation == 1e-6
        assert tol.max_kkt_solves == 5
