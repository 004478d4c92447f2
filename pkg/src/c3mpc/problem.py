"""MPC problem data shared by the QP assembly, C3 and the MIQP baseline.

Stacked variable order (public contract)::

    z = [z_0, z_1, ..., z_{N-1}, x_N],   z_k = [x_k, lam_k, u_k]

so ``z`` has ``N * (n_x + n_lambda + n_u) + n_x`` entries.  The terminal
block carries only the state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lcs import LcsModel


@dataclass(frozen=True)
class StackLayout:
    n_x: int
    n_lambda: int
    n_u: int
    N: int

    @classmethod
    def of(cls, model: LcsModel, N: int) -> "StackLayout":
        return cls(model.n_x, model.n_lambda, model.n_u, N)

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_lambda + self.n_u

    @property
    def size(self) -> int:
        return self.N * self.n_z + self.n_x

    def block(self, k: int) -> slice:
        return slice(k * self.n_z, (k + 1) * self.n_z)

    def x(self, k: int) -> slice:
        s = k * self.n_z
        return slice(s, s + self.n_x)

    def lam(self, k: int) -> slice:
        s = k * self.n_z + self.n_x
        return slice(s, s + self.n_lambda)

    def u(self, k: int) -> slice:
        s = k * self.n_z + self.n_x + self.n_lambda
        return slice(s, s + self.n_u)

    def split(self, z):
        """Return ``(xs, lams, us)`` with shapes (N+1, n_x), (N, n_l), (N, n_u)."""
        z = np.asarray(z)
        body = z[: self.N * self.n_z].reshape(self.N, self.n_z)
        xs = np.vstack([body[:, : self.n_x], z[self.N * self.n_z:][None, :]])
        lams = body[:, self.n_x:self.n_x + self.n_lambda]
        us = body[:, self.n_x + self.n_lambda:]
        return xs, lams, us

    def blocks(self, z) -> np.ndarray:
        """The ``N`` consensus blocks ``z_k`` as an (N, n_z) view."""
        return np.asarray(z)[: self.N * self.n_z].reshape(self.N, self.n_z)


def _per_step(mat, N, dim, name):
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (N, dim, dim))
    if arr.shape != (N, dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim} or {N}x{dim}x{dim}, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class McpProblemSpec:
    """Finite-horizon contact MPC problem.

    ``Q`` and ``R`` may be a single matrix (used for every stage) or a stack
    of ``N`` matrices.  ``Ain z <= bin`` is the convex set on the stacked
    variables; leave both None for no inequality constraints.
    """

    model: LcsModel
    N: int
    Q: np.ndarray
    R: np.ndarray
    QN: np.ndarray
    x0: np.ndarray
    Ain: Optional[np.ndarray] = None
    bin: Optional[np.ndarray] = None
    x_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        m = self.model
        Q = _per_step(self.Q, self.N, m.n_x, "Q")
        R = _per_step(self.R, self.N, m.n_u, "R")
        QN = np.asarray(self.QN, dtype=float)
        if QN.shape != (m.n_x, m.n_x):
            raise ValueError("QN shape mismatch")
        for k in range(self.N):
            if np.linalg.eigvalsh(0.5 * (Q[k] + Q[k].T)).min() < -1e-10:
                raise ValueError(f"Q[{k}] is not positive semidefinite")
            if m.n_u:
                try:
                    np.linalg.cholesky(0.5 * (R[k] + R[k].T))
                except np.linalg.LinAlgError:
                    raise ValueError(f"R[{k}] is not positive definite") from None
        if np.linalg.eigvalsh(0.5 * (QN + QN.T)).min() < -1e-10:
            raise ValueError("QN is not positive semidefinite")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != m.n_x:
            raise ValueError("x0 size mismatch")
        n = StackLayout.of(m, self.N).size
        Ain, bin_ = self.Ain, self.bin
        if (Ain is None) != (bin_ is None):
            raise ValueError("Ain and bin must be given together")
        if Ain is not None:
            Ain = np.asarray(Ain, dtype=float).reshape(-1, n)
            bin_ = np.asarray(bin_, dtype=float).reshape(-1)
            if Ain.shape[0] != bin_.size:
                raise ValueError("Ain/bin row mismatch")
            if Ain.shape[0] == 0:
                Ain = bin_ = None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "QN", QN)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "Ain", Ain)
        object.__setattr__(self, "bin", bin_)
        x_ref = np.zeros(m.n_x) if self.x_ref is None else np.asarray(self.x_ref, dtype=float).reshape(-1)
        if x_ref.size != m.n_x:
            raise ValueError("x_ref size mismatch")
        object.__setattr__(self, "x_ref", x_ref)

    @property
    def layout(self) -> StackLayout:
        return StackLayout.of(self.model, self.N)

    @property
    def has_inequalities(self) -> bool:
        return self.Ain is not None

    def with_x0(self, x0) -> "McpProblemSpec":
        return McpProblemSpec(self.model, self.N, self.Q, self.R, self.QN, x0, self.Ain, self.bin, self.x_ref)

    def with_model(self, model: LcsModel) -> "McpProblemSpec":
        return McpProblemSpec(model, self.N, self.Q, self.R, self.QN, self.x0, self.Ain, self.bin, self.x_ref)

    def reference_terms(self):
        """Linear term and constant that the target adds to ``sum x'Qx`` on the stack."""
        lay = self.layout
        r = np.zeros(lay.size)
        const = 0.0
        for k in range(self.N + 1):
            Qk = self.QN if k == self.N else self.Q[k]
            g = Qk @ self.x_ref
            r[lay.x(k)] = -2.0 * g
            const += float(self.x_ref @ g)
        return r, const

    def cost(self, xs, us) -> float:
        """Horizon cost ``sum x'Qx + u'Ru + x_N' QN x_N`` of a rollout (``x`` relative to ``x_ref``)."""
        xs = np.asarray(xs, dtype=float) - self.x_ref
        us = np.asarray(us, dtype=float).reshape(self.N, -1)
        total = 0.0
        for k in range(self.N):
            total += xs[k] @ self.Q[k] @ xs[k] + us[k] @ self.R[k] @ us[k]
        return float(total + xs[self.N] @ self.QN @ xs[self.N])


def stage_bounds(
    layout: StackLayout,
    x_lb=None,
    x_ub=None,
    u_lb=None,
    u_ub=None,
    lam_lb=None,
    lam_ub=None,
    include_x0: bool = False,
):
    """Box constraints on every stage as stacked rows ``Ain z <= bin``.

    State bounds apply to ``x_1 .. x_N`` (``x_0`` is pinned by the initial
    condition) unless ``include_x0`` is set.  Infinite bounds are skipped.
    """
    n = layout.size
    rows, rhs = [], []

    def add(sl, lb, ub):
        idx = np.arange(n)[sl]
        for j, i in enumerate(idx):
            if lb is not None and np.isfinite(lb[j]):
                r = np.zeros(n)
                r[i] = -1.0
                rows.append(r)
                rhs.append(-lb[j])
            if ub is not None and np.isfinite(ub[j]):
                r = np.zeros(n)
                r[i] = 1.0
                rows.append(r)
                rhs.append(ub[j])

    def vec(v, dim):
        return None if v is None else np.broadcast_to(np.asarray(v, dtype=float), (dim,))

    x_lb, x_ub = vec(x_lb, layout.n_x), vec(x_ub, layout.n_x)
    u_lb, u_ub = vec(u_lb, layout.n_u), vec(u_ub, layout.n_u)
    lam_lb, lam_ub = vec(lam_lb, layout.n_lambda), vec(lam_ub, layout.n_lambda)
    for k in range(layout.N + 1):
        if k > 0 or include_x0:
            add(layout.x(k), x_lb, x_ub)
        if k < layout.N:
            add(layout.lam(k), lam_lb, lam_ub)
            add(layout.u(k), u_lb, u_ub)
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def complementarity_bounds(layout: StackLayout, model: LcsModel):
    """Rows ``lam_k >= 0`` and ``E x_k + F lam_k + H u_k + c >= 0`` for every stage.

    These are the convex half of the complementarity constraint; adding them
    to the convex set keeps the quadratic step's forces and gaps physical.
    """
    nl = layout.n_lambda
    rows, rhs = [], []
    for k in range(layout.N):
        lam_rows = np.zeros((nl, layout.size))
        lam_rows[:, layout.lam(k)] = -np.eye(nl)
        gap_rows = np.zeros((nl, layout.size))
        gap_rows[:, layout.x(k)] = -model.E
        gap_rows[:, layout.lam(k)] = -model.F
        gap_rows[:, layout.u(k)] = -model.H
        rows += [lam_rows, gap_rows]
        rhs += [np.zeros(nl), model.c]
    if not rows:
        return np.zeros((0, layout.size)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)
