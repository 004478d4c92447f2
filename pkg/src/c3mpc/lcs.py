"""Linear complementarity problems and systems.

An LCP(q, F) asks for ``lam >= 0`` with ``y = F lam + q >= 0`` and
``lam' y = 0``.  A linear complementarity system (LCS) couples a linear
difference equation to one LCP per step::

    x[k+1] = A x[k] + B u[k] + D lam[k] + d
    0 <= lam[k]  _|_  E x[k] + F lam[k] + H u[k] + c >= 0
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels

LCP_TOL = 1e-9
ENUMERATION_CAP = 12

MODEL_KEYS = ("A", "B", "D", "d", "E", "F", "H", "c")


class LcpStatus(enum.Enum):
    SOLVED = "solved"
    RAY = "ray"
    ITER_LIMIT = "iter_limit"


_KERNEL_STATUS = {
    kernels.LCP_SOLVED: LcpStatus.SOLVED,
    kernels.LCP_RAY: LcpStatus.RAY,
    kernels.LCP_ITERLIMIT: LcpStatus.ITER_LIMIT,
}


class LcpError(RuntimeError):
    """Raised when an LCS step cannot resolve its contact forces."""

    def __init__(self, message, step=None, status=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
        self.status = status


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        if ndim == 2 and arr.size == 0:
            arr = arr.reshape(0, 0)
        else:
            raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LcpProblem:
    q: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        q = _frozen(self.q, 1)
        F = _frozen(self.F, 2) if np.size(self.F) else np.zeros((0, 0))
        if F.shape != (q.size, q.size):
            raise ValueError(f"F must be {q.size}x{q.size}, got {F.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "F", F)

    @property
    def m(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class LcpSolution:
    lam: np.ndarray
    y: np.ndarray
    status: LcpStatus
    pivots: int = 0
    method: str = "lemke"

    @property
    def solved(self) -> bool:
        return self.status is LcpStatus.SOLVED


def complementarity_residual(lam, y) -> float:
    """Largest violation of ``0 <= lam _|_ y >= 0``.

    Returns ``max(||min(lam, 0)||_inf, ||min(y, 0)||_inf, max_i |lam_i y_i|)``.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if lam.shape != y.shape:
        raise ValueError(f"length mismatch: {lam.size} vs {y.size}")
    if lam.size == 0:
        return 0.0
    return float(kernels.lcp_residual(lam, y))


def _accept(lam, F, q, tol):
    y = F @ lam + q
    scale = 1.0 + np.linalg.norm(lam) * np.linalg.norm(y)
    ok = (
        lam.min(initial=0.0) >= -tol
        and y.min(initial=0.0) >= -tol
        and abs(lam @ y) <= tol * scale
        and np.max(np.abs(lam * y), initial=0.0) <= tol * scale
    )
    return ok, y


def enumerate_lcp(problem: LcpProblem, tol: float = LCP_TOL):
    """Brute-force LCP solve over all ``2^m`` supports.

    Returns ``(lam, n_solutions)``; ``lam`` is None when no support yields a
    solution.  Intended for ``m <= 12``.
    """
    if problem.m > ENUMERATION_CAP:
        raise ValueError(f"enumeration capped at m={ENUMERATION_CAP}, got {problem.m}")
    q = np.ascontiguousarray(problem.q)
    F = np.ascontiguousarray(problem.F)
    lam, found, count = kernels.lcp_enumerate(F, q, tol)
    return (lam if found else None), int(count)


def solve_lcp(
    problem: LcpProblem,
    tol: float = LCP_TOL,
    max_pivots: Optional[int] = None,
    fallback: bool = True,
) -> LcpSolution:
    """Solve an LCP with Lemke's method.

    Ray or pivot-limit terminations (and any Lemke answer that fails the
    complementarity check) are retried by enumeration when ``m <= 12`` and
    ``fallback`` is set.  A failed solve never returns a wrong answer: the
    status says so.
    """
    m = problem.m
    q = np.ascontiguousarray(problem.q)
    F = np.ascontiguousarray(problem.F)
    if m == 0:
        return LcpSolution(np.zeros(0), np.zeros(0), LcpStatus.SOLVED)
    if max_pivots is None:
        max_pivots = 100 * m
    lam, code, pivots = kernels.lemke(F, q, max_pivots, 1e-12)
    status = _KERNEL_STATUS[int(code)]
    if status is LcpStatus.SOLVED:
        lam = np.maximum(lam, 0.0)
        ok, y = _accept(lam, F, q, tol)
        if ok:
            return LcpSolution(lam, y, status, int(pivots))
        status = LcpStatus.ITER_LIMIT
    if fallback and m <= ENUMERATION_CAP:
        lam_e, _ = enumerate_lcp(problem, tol)
        if lam_e is not None:
            ok, y = _accept(lam_e, F, q, tol)
            if ok:
                return LcpSolution(lam_e, y, LcpStatus.SOLVED, int(pivots), "enumeration")
    return LcpSolution(lam, F @ lam + q, status, int(pivots))


def is_p_matrix(F, tol: float = 0.0) -> bool:
    """True when every principal minor of ``F`` is positive (small ``F`` only)."""
    F = np.asarray(F, dtype=float)
    m = F.shape[0]
    if m > ENUMERATION_CAP:
        raise ValueError("principal-minor test is exponential; m too large")
    for k in range(1, m + 1):
        for idx in itertools.combinations(range(m), k):
            if np.linalg.det(F[np.ix_(idx, idx)]) <= tol:
                return False
    return True


@dataclass(frozen=True)
class LcsModel:
    """Discrete-time linear complementarity system."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    d: np.ndarray
    E: np.ndarray
    F: np.ndarray
    H: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        nx = A.shape[0]
        d = np.array(self.d, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        nl = c.size
        B = np.array(self.B, dtype=float)
        nu = B.size // nx if nx else 0
        B = B.reshape(nx, nu)
        D = np.array(self.D, dtype=float).reshape(nx, nl)
        E = np.array(self.E, dtype=float).reshape(nl, nx)
        F = np.array(self.F, dtype=float).reshape(nl, nl)
        H = np.array(self.H, dtype=float).reshape(nl, nu)
        if A.shape != (nx, nx) or d.size != nx:
            raise ValueError("A must be square and d must match its size")
        for name, arr in zip(MODEL_KEYS, (A, B, D, d, E, F, H, c)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_lambda(self) -> int:
        return self.c.size

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_lambda + self.n_u

    def gap(self, x, lam, u):
        return self.E @ x + self.F @ lam + self.H @ u + self.c

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in MODEL_KEYS}

    @classmethod
    def from_dict(cls, data: dict) -> "LcsModel":
        missing = [k for k in MODEL_KEYS if k not in data]
        if missing:
            raise ValueError(f"LCS document missing keys: {missing}")
        return cls(**{k: data[k] for k in MODEL_KEYS})

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LcsModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Trajectory:
    """Time-indexed LCS rollout: ``T + 1`` states and ``T`` of everything else."""

    states: np.ndarray
    forces: np.ndarray
    inputs: np.ndarray
    gaps: np.ndarray
    stage_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        T = self.inputs.shape[0]
        if self.states.shape[0] != T + 1:
            raise ValueError("states must have one more entry than inputs")
        if self.forces.shape[0] != T or self.gaps.shape[0] != T:
            raise ValueError("forces and gaps must have one entry per input")
        if self.stage_costs.size == 0:
            self.stage_costs = np.zeros(T)

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def total_cost(self) -> float:
        return float(self.stage_costs.sum())


def lcs_step(model: LcsModel, x, u, tol: float = LCP_TOL, step: Optional[int] = None):
    """Advance the LCS one step.

    Returns ``(x_next, lam, y)`` where ``lam`` solves
    ``LCP(E x + H u + c, F)``.  Raises :class:`LcpError` if the LCP cannot be
    solved.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != model.n_x or u.size != model.n_u:
        raise ValueError(
            f"expected x of size {model.n_x} and u of size {model.n_u}, got {x.size}, {u.size}"
        )
    q = model.E @ x + model.H @ u + model.c
    sol = solve_lcp(LcpProblem(q, model.F), tol=tol)
    if not sol.solved:
        raise LcpError(f"LCP not solved ({sol.status.value})", step=step, status=sol.status)
    x_next = model.A @ x + model.B @ u + model.D @ sol.lam + model.d
    return x_next, sol.lam, sol.y


NoiseSpec = Union[None, float, Callable[[int, np.random.Generator], np.ndarray]]


def simulate(
    model: LcsModel,
    x0,
    inputs: Sequence,
    noise: NoiseSpec = None,
    seed: Optional[int] = None,
    stage_cost: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
) -> Trajectory:
    """Roll the LCS forward under an open-loop input sequence.

    ``noise`` is either a standard deviation for i.i.d. Gaussian state
    disturbances or a callable ``noise(k, rng)`` returning the additive
    disturbance for step ``k``; it is added to ``x[k+1]`` after the step.
    """
    U = np.asarray(inputs, dtype=float).reshape(len(inputs), model.n_u)
    T = U.shape[0]
    if T < 1:
        raise ValueError("need at least one input")
    rng = np.random.default_rng(seed)
    xs = np.zeros((T + 1, model.n_x))
    lams = np.zeros((T, model.n_lambda))
    ys = np.zeros((T, model.n_lambda))
    costs = np.zeros(T)
    xs[0] = np.asarray(x0, dtype=float)
    for k in range(T):
        x_next, lams[k], ys[k] = lcs_step(model, xs[k], U[k], step=k)
        if noise is not None:
            if callable(noise):
                x_next = x_next + np.asarray(noise(k, rng), dtype=float)
            elif noise > 0:
                x_next = x_next + rng.normal(0.0, noise, size=model.n_x)
        xs[k + 1] = x_next
        if stage_cost is not None:
            costs[k] = stage_cost(xs[k], U[k])
    return Trajectory(xs, lams, U, ys, costs)
