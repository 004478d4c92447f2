"""Per-time-step projections onto the complementarity set.

For one step ``k`` the set is::

    H = {(x, lam, u) : lam >= 0, y = E x + F lam + H u + c >= 0, lam' y = 0}

and the projection of a target ``t`` minimizes ``(delta - t)' U (delta - t)``
over ``delta in H``.  Three methods are provided: an exact branch-and-bound
MIQP (:func:`project_miqp`), LCP shooting (:func:`project_lcp`) and a nested
ADMM heuristic (:func:`project_nested_admm`).  :func:`enumerate_projection_oracle`
is an exhaustive reference used by the tests.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import kernels
from .lcs import LCP_TOL, LcpProblem, LcsModel, complementarity_residual, solve_lcp
from .qp import chol_inv_t

DEFAULT_BIG_M = 1000.0
ORACLE_CAP = 12


class BigMTooSmall(UserWarning):
    """A projected variable sits on its big-M bound; the bound may be active."""


class ProjectionError(RuntimeError):
    """Raised when no point of the complementarity set could be produced."""


@dataclass(frozen=True)
class ComplementaritySet:
    E: np.ndarray
    F: np.ndarray
    H: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        m = c.size
        E = np.asarray(self.E, dtype=float)
        H = np.asarray(self.H, dtype=float)
        # explicit widths: reshape(0, -1) is ambiguous
        E = E.reshape(m, E.shape[-1] if E.ndim == 2 else -1)
        F = np.asarray(self.F, dtype=float).reshape(m, m)
        H = H.reshape(m, H.shape[-1] if H.ndim == 2 else -1)
        M = np.ascontiguousarray(np.hstack([E, F, H]))
        for name, arr in (("E", E), ("F", F), ("H", H), ("c", c)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        M.setflags(write=False)
        object.__setattr__(self, "_M", M)

    @classmethod
    def from_model(cls, model: LcsModel) -> "ComplementaritySet":
        return cls(model.E, model.F, model.H, model.c)

    @property
    def n_x(self) -> int:
        return self.E.shape[1]

    @property
    def n_lambda(self) -> int:
        return self.c.size

    @property
    def n_u(self) -> int:
        return self.H.shape[1]

    @property
    def n(self) -> int:
        return self.n_x + self.n_lambda + self.n_u

    @property
    def M(self) -> np.ndarray:
        """``[E F H]`` so that ``y = M delta + c``."""
        return self._M

    def lam(self, delta):
        return np.asarray(delta)[self.n_x:self.n_x + self.n_lambda]

    def gap(self, delta):
        return self._M @ np.asarray(delta, dtype=float) + self.c

    def residual(self, delta) -> float:
        return complementarity_residual(self.lam(delta), self.gap(delta))

    def contains(self, delta, tol: float = LCP_TOL) -> bool:
        return self.residual(delta) <= tol


def default_weight(n_x: int, n_lambda: int, n_u: int, ux=1.0, ul=0.01, uu=1.0) -> np.ndarray:
    """Block-diagonal projection weight ``diag(ux I, ul I, uu I)``."""
    return np.diag(np.concatenate([np.full(n_x, ux), np.full(n_lambda, ul), np.full(n_u, uu)]))


@dataclass(frozen=True)
class ProjectionTarget:
    point: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).reshape(-1)
        U = np.asarray(self.U, dtype=float)
        if U.shape != (p.size, p.size):
            raise ValueError(f"U must be {p.size}x{p.size}, got {U.shape}")
        if not np.allclose(U, U.T, atol=1e-12 * max(1.0, np.abs(U).max())):
            raise ValueError("U must be symmetric")
        if np.linalg.eigvalsh(U).min() < -1e-10 * max(1.0, np.abs(U).max()):
            raise ValueError("U must be positive semidefinite")
        object.__setattr__(self, "point", np.ascontiguousarray(p))
        object.__setattr__(self, "U", np.ascontiguousarray(U))

    def distance(self, delta) -> float:
        e = np.asarray(delta) - self.point
        return float(e @ self.U @ e)


@dataclass
class ProjectionResult:
    delta: np.ndarray
    objective: float
    residual: float
    method: str
    mode: Optional[np.ndarray] = None
    nodes: int = 0
    pivots: int = 0
    big_m_too_small: bool = False
    suboptimal: bool = False
    diverged: bool = False
    restored: bool = False
    admm_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check(target: ProjectionTarget, cset: ComplementaritySet):
    if target.point.size != cset.n:
        raise ValueError(f"target has {target.point.size} entries, set expects {cset.n}")


@lru_cache(maxsize=64)
def _weight_factor(key, n):
    U = np.frombuffer(key, dtype=float).reshape(n, n)
    J = chol_inv_t(2.0 * U)
    if J is not None:
        return U, J
    # semidefinite U: a tiny ridge keeps the dual active-set method applicable
    Ur = U + 1e-8 * max(1.0, np.abs(np.diag(U)).max()) * np.eye(n)
    return Ur, chol_inv_t(2.0 * Ur)


def _mode_from(lam, y):
    return (lam <= y).astype(np.int64)


def project_miqp(
    target: ProjectionTarget,
    cset: ComplementaritySet,
    big_m=DEFAULT_BIG_M,
    max_nodes: Optional[int] = None,
    tol: float = LCP_TOL,
) -> ProjectionResult:
    """Exact projection via branch-and-bound on the big-M formulation.

    ``mode[i] == 1`` means ``lam_i = 0`` (contact open); ``0`` means the gap
    is closed.  ``big_m_too_small`` is set (and :class:`BigMTooSmall` warned)
    if any returned force or gap lies within ``1e-6 M`` of ``M``.
    """
    _check(target, cset)
    n, m = cset.n, cset.n_lambda
    if m == 0:
        return ProjectionResult(target.point.copy(), 0.0, 0.0, "miqp", np.zeros(0, np.int64))
    if max_nodes is None:
        max_nodes = 4 * 2 ** min(m, 20) + 1
    Ureg, J = _weight_factor(target.U.tobytes(), n)
    delta, _, mode, status, nodes = kernels.project_bnb(
        J, Ureg, target.point, cset.M, cset.c, cset.n_x, float(big_m), max_nodes, 1e-13, 1e-10
    )
    if status == 1:
        raise ProjectionError("complementarity set is empty (no feasible mode)")
    if status == 2 and not np.isfinite(target.distance(delta)):
        raise ProjectionError("node budget exhausted before any feasible mode was found")
    lam, y = cset.lam(delta), cset.gap(delta)
    bound = 1e-6 * big_m
    near = bool(np.any(lam >= big_m - bound) or np.any(y >= big_m - bound))
    if near:
        warnings.warn("projection touches the big-M bound; increase big_m", BigMTooSmall, stacklevel=2)
    return ProjectionResult(
        delta,
        target.distance(delta),
        complementarity_residual(lam, y),
        "miqp",
        mode=np.asarray(mode),
        nodes=int(nodes),
        big_m_too_small=near,
        suboptimal=status == 2,
    )


def _lcp_rows(points, cset: ComplementaritySet, tol: float):
    # one kernel call for all rows; rows the kernel cannot certify fall back to solve_lcp
    out, status = kernels.lcp_project_batch(
        points, cset.E, cset.F, cset.H, cset.c, cset.n_x, 100 * cset.n_lambda, 1e-12
    )
    nx, m = cset.n_x, cset.n_lambda
    lams = np.maximum(out[:, nx:nx + m], 0.0)
    out[:, nx:nx + m] = lams
    gaps = out @ cset.M.T + cset.c
    for k in range(points.shape[0]):
        lam, y = lams[k], gaps[k]
        if status[k] == kernels.LCP_SOLVED and kernels.lcp_residual(lam, y) <= tol * (
            1.0 + np.sqrt((lam @ lam) * (y @ y))
        ):
            continue
        xk, uk = points[k, :nx], points[k, nx + m:]
        sol = solve_lcp(LcpProblem(cset.E @ xk + cset.H @ uk + cset.c, cset.F), tol=tol)
        if not sol.solved:
            raise ProjectionError(f"LCP projection failed ({sol.status.value})")
        out[k, nx:nx + m] = sol.lam
    return out


def project_lcp(target: ProjectionTarget, cset: ComplementaritySet, tol: float = LCP_TOL) -> ProjectionResult:
    """Keep the (x, u) slices of the target and solve the LCP for the forces."""
    _check(target, cset)
    nx, m = cset.n_x, cset.n_lambda
    if m == 0:
        return ProjectionResult(target.point.copy(), 0.0, 0.0, "lcp", np.zeros(0, np.int64))
    delta = _lcp_rows(target.point[None, :], cset, tol)[0]
    lam, y = delta[nx:nx + m], cset.gap(delta)
    return ProjectionResult(
        delta,
        target.distance(delta),
        complementarity_residual(lam, y),
        "lcp",
        mode=_mode_from(lam, y),
    )


def project_lcp_batch(points, cset: ComplementaritySet, tol: float = LCP_TOL) -> np.ndarray:
    """LCP projection of each row of ``points`` (one kernel call for all rows)."""
    points = np.ascontiguousarray(points, dtype=float)
    if cset.n_lambda == 0:
        return points.copy()
    return _lcp_rows(points, cset, tol)


def _admm_system(U, M, nx, rho):
    n = U.shape[0]
    m = M.shape[0]
    K = 2.0 * U + 2.0 * rho * (M.T @ M)
    K[nx:nx + m, nx:nx + m] += 2.0 * rho * np.eye(m)
    return np.ascontiguousarray(np.linalg.cholesky(K))


@lru_cache(maxsize=64)
def _admm_cholesky(ukey, mkey, n, m, nx, rho):
    U = np.frombuffer(ukey, dtype=float).reshape(n, n)
    M = np.frombuffer(mkey, dtype=float).reshape(m, n)
    return _admm_system(U, M, nx, rho)


def project_nested_admm(
    target: ProjectionTarget,
    cset: ComplementaritySet,
    inner_iters: int = 30,
    inner_rho: float = 1.0,
    restore: bool = True,
    tol: float = LCP_TOL,
) -> ProjectionResult:
    """Approximate projection by an inner consensus ADMM.

    No feasibility guarantee comes from the iteration itself; the final
    complementarity residual is reported.  With ``restore`` (default) an
    unconverged result has its forces recomputed from its own (x, u) by an
    LCP solve, so that the returned point lies in the set.
    """
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    if inner_rho <= 0:
        raise ValueError("inner_rho must be positive")
    _check(target, cset)
    n, m, nx = cset.n, cset.n_lambda, cset.n_x
    if m == 0:
        return ProjectionResult(target.point.copy(), 0.0, 0.0, "admm", np.zeros(0, np.int64))
    L = _admm_cholesky(target.U.tobytes(), cset.M.tobytes(), n, m, nx, float(inner_rho))
    delta, omega, res, diverged = kernels.admm_project(
        L, target.U, target.point, cset.M, cset.c, nx, float(inner_rho), int(inner_iters)
    )
    # forces from the snapped copy keep lam >= 0
    delta = delta.copy()
    delta[nx:nx + m] = omega[:m]
    lam, y = delta[nx:nx + m], cset.gap(delta)
    resid = float(kernels.lcp_residual(lam, y))
    restored = False
    if restore and resid > tol:
        delta = _lcp_rows(delta[None, :], cset, tol)[0]
        lam, y = delta[nx:nx + m], cset.gap(delta)
        resid = float(kernels.lcp_residual(lam, y))
        restored = True
    return ProjectionResult(
        delta,
        target.distance(delta),
        resid,
        "admm",
        mode=_mode_from(lam, y),
        diverged=bool(diverged),
        restored=restored,
        admm_residuals=np.asarray(res),
    )


def enumerate_projection_oracle(
    target: ProjectionTarget, cset: ComplementaritySet, tol: float = 1e-9
) -> ProjectionResult:
    """Exhaustive projection: every face of the complementarity set.

    Each pair (lam_i, y_i) is pinned to one of lam_i = 0, y_i = 0 or both;
    the resulting equality-constrained least-squares problem is solved from
    its KKT system and kept if the free side is nonnegative.  The best
    feasible face is the global projection.  No big-M bounds are used.
    """
    _check(target, cset)
    n, m, nx = cset.n, cset.n_lambda, cset.n_x
    if m > ORACLE_CAP:
        raise ValueError(f"oracle capped at n_lambda={ORACLE_CAP}")
    U, t = target.U, target.point
    M, c = cset.M, cset.c
    lam_rows = np.zeros((m, n))
    lam_rows[:, nx:nx + m] = np.eye(m)
    best, best_d, best_mode = np.inf, None, None
    for pattern in itertools.product((0, 1, 2), repeat=m):
        pat = np.array(pattern)
        rows = [lam_rows[i] for i in range(m) if pat[i] in (0, 2)]
        rhs = [0.0 for i in range(m) if pat[i] in (0, 2)]
        rows += [M[i] for i in range(m) if pat[i] in (1, 2)]
        rhs += [-c[i] for i in range(m) if pat[i] in (1, 2)]
        A = np.array(rows).reshape(-1, n)
        b = np.array(rhs)
        k = A.shape[0]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = 2.0 * U
        K[:n, n:] = A.T
        K[n:, :n] = A
        sol = np.linalg.lstsq(K, np.concatenate([2.0 * U @ t, b]), rcond=None)[0]
        d = sol[:n]
        if k and np.abs(A @ d - b).max() > tol * (1.0 + np.abs(b).max()):
            continue
        lam, y = d[nx:nx + m], M @ d + c
        if lam.min() < -tol or y.min() < -tol:
            continue
        obj = float((d - t) @ U @ (d - t))
        if obj < best:
            best, best_d, best_mode = obj, d, (pat != 1).astype(np.int64)
    if best_d is None:
        raise ProjectionError("complementarity set is empty")
    return ProjectionResult(
        best_d, best, complementarity_residual(cset.lam(best_d), cset.gap(best_d)), "enumeration", best_mode
    )


PROJECTIONS = {
    "miqp": project_miqp,
    "lcp": project_lcp,
    "admm": project_nested_admm,
}
