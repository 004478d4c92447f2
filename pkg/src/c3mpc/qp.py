"""Dense convex QP solvers and the C3 quadratic-step assembly.

Problems have the form::

    min  1/2 v'Pv + r'v + constant
    s.t. Aeq v = beq,  Ain v <= bin

Equality-only problems are solved through their KKT system.  Problems with
inequalities go to a Goldfarb-Idnani dual active-set method; when ``P`` is
only semidefinite it is wrapped in proximal-point iterations followed by an
active-set polish on the original ``P``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .problem import McpProblemSpec, StackLayout

QP_TOL = 1e-8


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class QuadraticProgram:
    P: np.ndarray
    r: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Ain: np.ndarray = None
    bin: np.ndarray = None
    constant: float = 0.0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(P).max(initial=0.0))):
            raise ValueError("P must be symmetric")
        r = np.asarray(self.r, dtype=float).reshape(n)

        def rows(A, b, name):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.asarray(A, dtype=float).reshape(-1, n)
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] != b.size:
                raise ValueError(f"{name} rows and right-hand side disagree")
            return A, b

        Aeq, beq = rows(self.Aeq, self.beq, "equality")
        Ain, bin_ = rows(self.Ain, self.bin, "inequality")
        for name, val in (("P", P), ("r", r), ("Aeq", Aeq), ("beq", beq), ("Ain", Ain), ("bin", bin_)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def objective(self, v) -> float:
        return float(0.5 * v @ self.P @ v + self.r @ v + self.constant)

    def max_violation(self, v) -> float:
        eq = np.abs(self.Aeq @ v - self.beq).max(initial=0.0)
        ineq = (self.Ain @ v - self.bin).max(initial=0.0)
        return float(max(eq, ineq))


@dataclass
class QpSolution:
    v: np.ndarray
    status: QpStatus
    objective: float
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    least_squares: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residual(qp: QuadraticProgram, sol: QpSolution) -> float:
    """Stationarity residual ``||P v + r + Aeq' nu + Ain' mu||_inf``."""
    g = qp.P @ sol.v + qp.r
    if qp.Aeq.shape[0]:
        g = g + qp.Aeq.T @ sol.duals_eq
    if qp.Ain.shape[0]:
        g = g + qp.Ain.T @ sol.duals_in
    return float(np.abs(g).max(initial=0.0))


class KktFactor:
    """LU factorization of an equality-QP KKT matrix, reusable across
    right-hand sides.  ``rank_ok`` is False when the KKT matrix is singular
    (rank-deficient ``Aeq`` or ``P`` singular on its null space)."""

    def __init__(self, P, Aeq):
        P = np.asarray(P, dtype=float)
        Aeq = np.asarray(Aeq, dtype=float).reshape(-1, P.shape[0])
        self.n, self.m = P.shape[0], Aeq.shape[0]
        K = np.zeros((self.n + self.m, self.n + self.m))
        K[: self.n, : self.n] = P
        K[: self.n, self.n:] = Aeq.T
        K[self.n:, : self.n] = Aeq
        self.K = K
        s = np.linalg.svd(K, compute_uv=False)
        self.rank_ok = bool(s.size == 0 or s[-1] > 1e-12 * s[0])
        self.lu = sla.lu_factor(K, check_finite=False) if self.rank_ok else None

    def solve(self, r, beq):
        rhs = np.concatenate([-np.asarray(r, dtype=float), np.asarray(beq, dtype=float)])
        if self.rank_ok:
            sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        else:
            sol = np.linalg.lstsq(self.K, rhs, rcond=None)[0]
        return sol[: self.n], sol[self.n:]


def solve_eq_qp(qp: QuadraticProgram, factor: Optional[KktFactor] = None, tol: float = QP_TOL) -> QpSolution:
    """Solve an equality-constrained QP from its KKT conditions.

    A singular KKT system falls back to least squares; the result is flagged
    ``least_squares`` and reported OPTIMAL only if the system is consistent.
    """
    if qp.Ain.shape[0]:
        raise ValueError("solve_eq_qp handles equality constraints only")
    if factor is None:
        factor = KktFactor(qp.P, qp.Aeq)
    v, nu = factor.solve(qp.r, qp.beq)
    status = QpStatus.OPTIMAL
    if not factor.rank_ok:
        resid = factor.K @ np.concatenate([v, nu]) - np.concatenate([-qp.r, qp.beq])
        scale = 1.0 + np.abs(qp.r).max(initial=0.0) + np.abs(qp.beq).max(initial=0.0)
        if np.abs(resid).max(initial=0.0) > tol * scale:
            status = QpStatus.INFEASIBLE
    return QpSolution(v, status, qp.objective(v), nu, np.zeros(0), 1, not factor.rank_ok)


def _as_ge(qp: QuadraticProgram):
    C = np.ascontiguousarray(np.vstack([qp.Aeq, -qp.Ain]))
    b = np.ascontiguousarray(np.concatenate([qp.beq, -qp.bin]))
    return C, b, qp.Aeq.shape[0]


def _run_dual(J, r, C, b, neq, tol, max_iter):
    x, mult, code, it = kernels.dual_active_set(J, np.ascontiguousarray(r), C, b, neq, tol, max_iter)
    status = {kernels.QP_OPTIMAL: QpStatus.OPTIMAL, kernels.QP_INFEASIBLE: QpStatus.INFEASIBLE}.get(
        int(code), QpStatus.ITER_LIMIT
    )
    return x, mult, status, int(it)


def chol_inv_t(P):
    """``L^{-T}`` for ``P = L L'``; None if ``P`` is not numerically PD."""
    P = np.ascontiguousarray(P, dtype=float)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    # cond(P) above ~1e10 loses too much in the dual active-set updates
    if d.min() <= 1e-5 * d.max():
        return None
    return np.ascontiguousarray(sla.solve_triangular(L, np.eye(P.shape[0]), lower=True).T)


def _polish(qp, v, mult, neq, tol):
    """Re-solve the KKT system of the original P on the detected active set."""
    n = qp.n
    slack = qp.bin - qp.Ain @ v
    act = (mult[neq:] > tol) | (slack <= tol * (1.0 + np.abs(qp.bin)))
    A = np.vstack([qp.Aeq, qp.Ain[act]])
    b = np.concatenate([qp.beq, qp.bin[act]])
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = qp.P
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-qp.r - qp.P @ v, b - A @ v])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    v2 = v + sol[:n]
    nu = sol[n:]
    duals_in = np.zeros(qp.Ain.shape[0])
    duals_in[act] = nu[neq:]
    return v2, nu[:neq], duals_in


def solve_qp(
    qp: QuadraticProgram,
    tol: float = QP_TOL,
    max_iter: Optional[int] = None,
    chol_factor: Optional[np.ndarray] = None,
) -> QpSolution:
    """Solve a convex QP.

    Parameters
    ----------
    qp : QuadraticProgram
    tol : float
        Feasibility tolerance.
    max_iter : int, optional
        Active-set iteration cap; defaults to ``50 * (number of constraints)``.
    chol_factor : ndarray, optional
        Precomputed ``L^{-T}`` of ``P`` (skips the factorization).
    """
    n_con = qp.Aeq.shape[0] + qp.Ain.shape[0]
    if max_iter is None:
        max_iter = 50 * max(n_con, 1) + 2 * qp.n
    if qp.Ain.shape[0] == 0 and chol_factor is None:
        return solve_eq_qp(qp, tol=tol)
    C, b, neq = _as_ge(qp)
    J = chol_factor if chol_factor is not None else chol_inv_t(qp.P)
    if J is not None:
        x, mult, status, it = _run_dual(J, qp.r, C, b, neq, tol, max_iter)
        return QpSolution(x, status, qp.objective(x), -mult[:neq], mult[neq:], it)
    return _solve_psd(qp, C, b, neq, tol, max_iter)


def _solve_psd(qp, C, b, neq, tol, max_iter, max_prox=200):
    # proximal point: min f(v) + eps/2 ||v - vbar||^2, repeated
    n = qp.n
    eps = 1e-6 * max(1.0, np.abs(np.diag(qp.P)).max(initial=0.0))
    J = chol_inv_t(qp.P + eps * np.eye(n))
    if J is None:
        raise ValueError("P is not positive semidefinite")
    vbar = np.zeros(n)
    total = 0
    x = vbar
    mult = np.zeros(C.shape[0])
    for _ in range(max_prox):
        x, mult, status, it = _run_dual(J, qp.r - eps * vbar, C, b, neq, tol, max_iter)
        total += it
        if status is not QpStatus.OPTIMAL:
            return QpSolution(x, status, qp.objective(x), -mult[:neq], mult[neq:], total)
        step = np.abs(x - vbar).max()
        vbar = x
        if step <= 1e-10 * (1.0 + np.abs(x).max()):
            break
    duals_eq, duals_in = -mult[:neq], mult[neq:]
    # prox multipliers carry an eps*(x - vbar) error; polish on the true P
    v2, nu2, mu2 = _polish(qp, x, mult, neq, tol)
    ok = (
        qp.max_violation(v2) <= tol * (1.0 + np.abs(qp.bin).max(initial=0.0) + np.abs(qp.beq).max(initial=0.0))
        and mu2.min(initial=0.0) >= -tol * (1.0 + np.abs(mu2).max(initial=0.0))
        and qp.objective(v2) <= qp.objective(x) + 1e-12 * (1.0 + abs(qp.objective(x)))
    )
    if ok:
        x, duals_eq, duals_in = v2, nu2, mu2
    return QpSolution(x, QpStatus.OPTIMAL, qp.objective(x), duals_eq, duals_in, total)


# --------------------------------------------------------------------------
# Quadratic step of C3
# --------------------------------------------------------------------------


def mpc_hessian(spec: McpProblemSpec, G) -> np.ndarray:
    """Hessian of the quadratic step: ``2 blkdiag(Q_k (+) 0 (+) R_k) + 2 G_k``, ``2 QN``."""
    lay = spec.layout
    G = _stage_weights(G, lay)
    P = np.zeros((lay.size, lay.size))
    nx, nl = lay.n_x, lay.n_lambda
    for k in range(lay.N):
        b = lay.block(k)
        blk = 2.0 * G[k]
        blk[:nx, :nx] += 2.0 * spec.Q[k]
        blk[nx + nl:, nx + nl:] += 2.0 * spec.R[k]
        P[b, b] = blk
    xN = lay.x(lay.N)
    P[xN, xN] = 2.0 * spec.QN
    return 0.5 * (P + P.T)


def mpc_equalities(spec: McpProblemSpec):
    """Initial-condition rows then ``N`` blocks of dynamics rows."""
    m = spec.model
    lay = spec.layout
    nx = lay.n_x
    A = np.zeros(((lay.N + 1) * nx, lay.size))
    b = np.zeros((lay.N + 1) * nx)
    A[:nx, lay.x(0)] = np.eye(nx)
    b[:nx] = spec.x0
    for k in range(lay.N):
        rows = slice((k + 1) * nx, (k + 2) * nx)
        A[rows, lay.x(k + 1)] = np.eye(nx)
        A[rows, lay.x(k)] = -m.A
        A[rows, lay.lam(k)] = -m.D
        A[rows, lay.u(k)] = -m.B
        b[rows] = m.d
    return A, b


def _stage_weights(G, lay: StackLayout):
    G = np.asarray(G, dtype=float)
    if G.ndim == 0:
        G = G * np.eye(lay.n_z)
    if G.ndim == 2:
        G = np.broadcast_to(G, (lay.N, lay.n_z, lay.n_z))
    if G.shape != (lay.N, lay.n_z, lay.n_z):
        raise ValueError(f"consensus weights must be {lay.n_z}x{lay.n_z} (per step), got {G.shape}")
    return np.array(G)


def mpc_linear_term(spec: McpProblemSpec, delta, w, G):
    """Linear term and constant of the consensus penalty plus the state target."""
    lay = spec.layout
    G = _stage_weights(G, lay)
    r = np.zeros(lay.size)
    const = 0.0
    e = np.asarray(w, dtype=float).reshape(lay.N, lay.n_z) - np.asarray(delta, dtype=float).reshape(
        lay.N, lay.n_z
    )
    for k in range(lay.N):
        ge = G[k] @ e[k]
        r[lay.block(k)] = 2.0 * ge
        const += e[k] @ ge
    r_ref, c_ref = spec.reference_terms()
    return r + r_ref, float(const + c_ref)


def assemble_mpc_qp(model, spec: McpProblemSpec, deltas, duals, G) -> QuadraticProgram:
    """Quadratic step of C3.

    Cost ``c(z) + sum_k (z_k - delta_k + w_k)' G_k (z_k - delta_k + w_k)``
    subject to the initial condition, the dynamics and the convex
    constraints of ``spec``.  ``model`` overrides ``spec.model`` when given.
    """
    if model is not None and model is not spec.model:
        spec = spec.with_model(model)
    P = mpc_hessian(spec, G)
    r, const = mpc_linear_term(spec, deltas, duals, G)
    Aeq, beq = mpc_equalities(spec)
    return QuadraticProgram(P, r, Aeq, beq, spec.Ain, spec.bin, const)
