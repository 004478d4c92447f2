import itertools

import numpy as np
import pytest
import scipy.linalg as sla

from c3mpc.lcs import LcsModel
from c3mpc.models import cartpole_lcs
from c3mpc.problem import McpProblemSpec
from c3mpc.qp import (
    QpStatus,
    QuadraticProgram,
    assemble_mpc_qp,
    kkt_residual,
    solve_eq_qp,
    solve_qp,
)

TOL = 1e-8


def _random_pd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def _kkt_ok(qp, sol, tol=1e-7):
    v = sol.v
    scale = 1.0 + np.abs(qp.P).max() * (1 + np.abs(v).max()) + np.abs(qp.r).max(initial=0.0)
    assert kkt_residual(qp, sol) <= tol * scale
    assert qp.max_violation(v) <= tol * (1 + np.abs(v).max())
    if qp.Ain.shape[0]:
        mu = sol.duals_in
        assert mu.min() >= -tol * scale
        slack = qp.bin - qp.Ain @ v
        assert np.abs(mu * slack).max() <= tol * scale * (1 + np.abs(slack).max())


def _null_space_solve(P, r, A, b):
    v0 = np.linalg.lstsq(A, b, rcond=None)[0]
    Z = sla.null_space(A)
    y = np.linalg.solve(Z.T @ P @ Z, -Z.T @ (P @ v0 + r))
    return v0 + Z @ y


def _enumerate_active_sets(qp):
    best = np.inf
    m = qp.Ain.shape[0]
    for k in range(m + 1):
        for S in itertools.combinations(range(m), k):
            A = np.vstack([qp.Aeq, qp.Ain[list(S)]])
            b = np.concatenate([qp.beq, qp.bin[list(S)]])
            if A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]:
                continue
            if A.shape[0] >= qp.n:
                v = np.linalg.lstsq(A, b, rcond=None)[0]
                if np.abs(A @ v - b).max() > 1e-9:
                    continue
            elif A.shape[0]:
                v = _null_space_solve(qp.P, qp.r, A, b)
            else:
                v = np.linalg.solve(qp.P, -qp.r)
            if qp.max_violation(v) <= 1e-9:
                best = min(best, qp.objective(v))
    return best


def test_unconstrained_identity():
    sol = solve_eq_qp(QuadraticProgram(np.eye(3), np.zeros(3)))
    assert sol.optimal and np.allclose(sol.v, 0.0)


def test_symmetric_equality():
    sol = solve_eq_qp(QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0]))
    assert np.allclose(sol.v, [1.0, 1.0])


def test_equality_qp_matches_null_space_oracle(rng):
    n, m = 20, 7
    P = _random_pd(rng, n)
    r = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    sol = solve_eq_qp(QuadraticProgram(P, r, A, b))
    assert sol.optimal
    assert np.allclose(sol.v, _null_space_solve(P, r, A, b), atol=1e-8)


def test_rank_deficient_equalities_flagged():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    consistent = solve_eq_qp(QuadraticProgram(np.eye(2), np.zeros(2), A, [1.0, 2.0]))
    assert consistent.least_squares and consistent.optimal
    assert np.allclose(consistent.v, [0.5, 0.5])
    inconsistent = solve_eq_qp(QuadraticProgram(np.eye(2), np.zeros(2), A, [1.0, 3.0]))
    assert inconsistent.status is QpStatus.INFEASIBLE


def test_box_constrained_scalar():
    # min (v - 2)^2 = v^2 - 4v + 4,  v <= 1
    qp = QuadraticProgram([[2.0]], [-4.0], Ain=[[1.0]], bin=[1.0], constant=4.0)
    sol = solve_qp(qp)
    assert sol.optimal and sol.v[0] == pytest.approx(1.0)
    assert sol.objective == pytest.approx(1.0)


def test_unconstrained_solve_qp_reduces_to_eq(rng):
    P = _random_pd(rng, 5)
    r = rng.normal(size=5)
    a = solve_qp(QuadraticProgram(P, r))
    b = solve_eq_qp(QuadraticProgram(P, r))
    assert np.allclose(a.v, b.v)


def test_random_inequality_qp_kkt(rng):
    n, m = 30, 15
    for _ in range(5):
        P = _random_pd(rng, n)
        r = rng.normal(size=n) * 5
        Ain = rng.normal(size=(m, n))
        bin_ = rng.uniform(0.0, 1.0, m)  # v = 0 is feasible
        Aeq = rng.normal(size=(3, n))
        qp = QuadraticProgram(P, r, Aeq, np.zeros(3), Ain, bin_)
        sol = solve_qp(qp)
        assert sol.optimal
        _kkt_ok(qp, sol)
        # optimality upper bound: no feasible point does better
        assert sol.objective <= qp.objective(np.zeros(n)) + 1e-9


def test_matches_active_set_enumeration(rng):
    n, m = 8, 8
    for _ in range(10):
        P = _random_pd(rng, n)
        r = rng.normal(size=n) * 5
        Ain = rng.normal(size=(m, n))
        bin_ = rng.uniform(0.0, 1.0, m)
        qp = QuadraticProgram(P, r, Ain=Ain, bin=bin_)
        sol = solve_qp(qp)
        assert sol.objective == pytest.approx(_enumerate_active_sets(qp), abs=1e-6)


def test_semidefinite_cost(rng):
    # P singular: min 1/2 v1^2 - v2 with v2 <= 3, v1 + v2 >= 1
    P = np.diag([1.0, 0.0])
    qp = QuadraticProgram(P, [0.0, -1.0], Ain=[[0.0, 1.0], [-1.0, -1.0]], bin=[3.0, -1.0])
    sol = solve_qp(qp)
    assert sol.optimal
    assert np.allclose(sol.v, [0.0, 3.0], atol=1e-7)


def test_infeasible_detected():
    qp = QuadraticProgram(np.eye(1), [0.0], Ain=[[1.0], [-1.0]], bin=[-1.0, -1.0])
    assert solve_qp(qp).status is QpStatus.INFEASIBLE


def test_nonsymmetric_cost_rejected():
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0])


def _cartpole_spec(N=10):
    return McpProblemSpec(cartpole_lcs(), N, np.eye(4), np.eye(1), np.eye(4), np.array([0.1, 0.0, 0.0, 0.0]))


def test_assembly_row_count():
    spec = _cartpole_spec()
    qp = assemble_mpc_qp(None, spec, np.zeros((10, 7)), np.zeros((10, 7)), 0.1)
    assert qp.Aeq.shape[0] == 4 * 10 + 4
    assert qp.Ain.shape[0] == 0


def test_consensus_penalty_expansion(rng):
    spec = _cartpole_spec(N=3)
    lay = spec.layout
    delta = rng.normal(size=(3, 7))
    w = rng.normal(size=(3, 7))
    G = 0.7
    base = assemble_mpc_qp(None, spec, np.zeros((3, 7)), np.zeros((3, 7)), 0.0)
    full = assemble_mpc_qp(None, spec, delta, w, G)
    z = rng.normal(size=lay.size)
    penalty = sum(G * np.sum((lay.blocks(z)[k] - delta[k] + w[k]) ** 2) for k in range(3))
    assert full.objective(z) == pytest.approx(base.objective(z) + penalty, rel=1e-12)
    # zero delta and w: G adds G ||z_k||^2 on the consensus blocks
    plain = assemble_mpc_qp(None, spec, np.zeros((3, 7)), np.zeros((3, 7)), G)
    assert plain.objective(z) == pytest.approx(base.objective(z) + G * np.sum(lay.blocks(z) ** 2), rel=1e-12)


def test_zero_consensus_is_lq_mpc():
    # N=1 one-step LQ: min x0'Qx0 + u'Ru + x1'QN x1 with x1 = A x0 + B u
    m = LcsModel(A=[[1.0]], B=[[1.0]], D=[[0.0]], d=[0.0], E=[[0.0]], F=[[1.0]], H=[[0.0]], c=[1.0])
    spec = McpProblemSpec(m, 1, [[1.0]], [[1.0]], [[1.0]], [2.0])
    qp = assemble_mpc_qp(None, spec, np.zeros((1, 3)), np.zeros((1, 3)), 0.0)
    # lam has zero cost and no consensus weight: pin it so the problem is strictly convex
    qp = QuadraticProgram(qp.P, qp.r, np.vstack([qp.Aeq, [0, 1.0, 0, 0]]), np.append(qp.beq, 0.0), constant=qp.constant)
    sol = solve_qp(qp)
    # d/du [u^2 + (2 + u)^2] = 0  ->  u = -1
    assert sol.v[2] == pytest.approx(-1.0)
    assert sol.objective == pytest.approx(4.0 + 1.0 + 1.0)


def test_assembly_rejects_bad_shapes():
    spec = _cartpole_spec(N=2)
    with pytest.raises(ValueError):
        assemble_mpc_qp(None, spec, np.zeros((2, 7)), np.zeros((2, 7)), np.eye(3))
