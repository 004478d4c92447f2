"""Full-horizon mixed-integer baseline by branch-and-bound.

Every complementarity pair ``(lam_{k,i}, y_{k,i})`` gets a binary mode.  With
a big-M bound ``M`` the pair is encoded as::

    s = 1 (open):    lam = 0,  0 <= y <= M
    s = 0 (closed):  y = 0,    0 <= lam <= M
    free (relaxed):  lam >= 0, y >= 0, lam + y <= M

The last line is the tightest convex relaxation of the two binary cases.
Each node is a convex QP over the stacked MPC variables; the search returns
the global optimum when it completes.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lcs import LCP_TOL, LcpError, complementarity_residual, lcs_step
from .problem import McpProblemSpec
from .projections import DEFAULT_BIG_M
from .qp import QuadraticProgram, mpc_equalities, solve_qp

OPEN, CLOSED, FREE = 1, 0, -1
MODE_CAP = 40
REL_GAP = 1e-9


class MiqpInfeasible(RuntimeError):
    """No mode sequence admits a feasible trajectory."""


@dataclass
class MiqpNode:
    """Search node: partial mode assignment and the parent's relaxation bound."""

    modes: np.ndarray  # (N, n_lambda), entries OPEN, CLOSED or FREE
    bound: float
    incumbent: float


@dataclass
class MiqpResult:
    states: np.ndarray
    forces: np.ndarray
    inputs: np.ndarray
    objective: float
    modes: np.ndarray
    nodes: int
    suboptimal: bool
    seeded: bool
    elapsed: float

    @property
    def u0(self) -> np.ndarray:
        return self.inputs[0]


class _NodeProblem:
    """Shared data for node QPs: cost, dynamics, convex set and gap rows."""

    def __init__(self, spec: McpProblemSpec, big_m: float):
        self.spec = spec
        self.lay = lay = spec.layout
        self.big_m = float(big_m)
        m = spec.model
        P = np.zeros((lay.size, lay.size))
        for k in range(lay.N):
            P[lay.x(k), lay.x(k)] = 2.0 * spec.Q[k]
            P[lay.u(k), lay.u(k)] = 2.0 * spec.R[k]
        P[lay.x(lay.N), lay.x(lay.N)] = 2.0 * spec.QN
        self.P = 0.5 * (P + P.T)
        self.r, self.const = spec.reference_terms()
        self.Aeq, self.beq = mpc_equalities(spec)
        nl = lay.n_lambda
        # lam rows and gap rows as affine maps of the stacked vector
        self.lam_rows = np.zeros((lay.N * nl, lay.size))
        self.gap_rows = np.zeros((lay.N * nl, lay.size))
        self.gap_off = np.tile(m.c, lay.N)
        for k in range(lay.N):
            r = slice(k * nl, (k + 1) * nl)
            self.lam_rows[r, lay.lam(k)] = np.eye(nl)
            self.gap_rows[r, lay.x(k)] = m.E
            self.gap_rows[r, lay.lam(k)] = m.F
            self.gap_rows[r, lay.u(k)] = m.H

    def qp(self, modes: np.ndarray) -> QuadraticProgram:
        M = self.big_m
        flat = modes.ravel()
        L, Gr, g0 = self.lam_rows, self.gap_rows, self.gap_off
        rows, rhs = [], []
        eq_rows, eq_rhs = [self.Aeq], [self.beq]
        # lam >= 0, y >= 0 always
        rows += [-L, -Gr]
        rhs += [np.zeros(len(flat)), g0]
        opn, cls, fre = flat == OPEN, flat == CLOSED, flat == FREE
        if opn.any():
            eq_rows.append(L[opn])
            eq_rhs.append(np.zeros(opn.sum()))
            rows.append(Gr[opn])
            rhs.append(M - g0[opn])
        if cls.any():
            eq_rows.append(Gr[cls])
            eq_rhs.append(-g0[cls])
            rows.append(L[cls])
            rhs.append(np.full(cls.sum(), M))
        if fre.any():
            rows.append(L[fre] + Gr[fre])
            rhs.append(M - g0[fre])
        if self.spec.has_inequalities:
            rows.append(self.spec.Ain)
            rhs.append(self.spec.bin)
        return QuadraticProgram(
            self.P, self.r, np.vstack(eq_rows), np.concatenate(eq_rhs), np.vstack(rows), np.concatenate(rhs), self.const
        )

    def objective(self, v) -> float:
        return float(0.5 * v @ self.P @ v + self.r @ v + self.const)

    def pairs(self, v):
        shape = (self.lay.N, self.lay.n_lambda)
        return (self.lam_rows @ v).reshape(shape), (self.gap_rows @ v + self.gap_off).reshape(shape)


def _rollout(spec: McpProblemSpec, inputs):
    m = spec.model
    xs = np.zeros((spec.N + 1, m.n_x))
    lams = np.zeros((spec.N, m.n_lambda))
    gaps = np.zeros((spec.N, m.n_lambda))
    xs[0] = spec.x0
    for k in range(spec.N):
        xs[k + 1], lams[k], gaps[k] = lcs_step(m, xs[k], inputs[k], step=k)
    return xs, lams, gaps


def _stack(lay, xs, lams, us):
    v = np.zeros(lay.size)
    for k in range(lay.N):
        v[lay.x(k)], v[lay.lam(k)], v[lay.u(k)] = xs[k], lams[k], us[k]
    v[lay.x(lay.N)] = xs[lay.N]
    return v


def _seed(spec: McpProblemSpec, node: _NodeProblem, seed_inputs):
    """Rollout of ``seed_inputs`` if it is feasible for the big-M problem."""
    try:
        xs, lams, gaps = _rollout(spec, seed_inputs)
    except LcpError:
        return None
    if lams.max(initial=0.0) > node.big_m or gaps.max(initial=0.0) > node.big_m:
        return None
    v = _stack(node.lay, xs, lams, seed_inputs)
    if spec.has_inequalities and (spec.Ain @ v - spec.bin).max() > 1e-9:
        return None
    modes = np.where(lams <= gaps, OPEN, CLOSED)
    return v, node.objective(v), modes


def _c3_seed(spec: McpProblemSpec):
    from .controller import C3Config, C3Error, c3_solve

    try:
        return c3_solve(spec, C3Config(projection="lcp")).inputs
    except (C3Error, LcpError):
        # no seed; the search still certifies infeasibility or finds the optimum
        return None


def solve_full_miqp(
    spec: McpProblemSpec,
    big_m: float = DEFAULT_BIG_M,
    budget: Optional[int] = None,
    seed_inputs=None,
    seed_with_c3: bool = True,
    tol: float = LCP_TOL,
) -> MiqpResult:
    """Globally optimal contact MPC over all mode sequences.

    Parameters
    ----------
    spec : McpProblemSpec
    big_m : float
        Bound on forces and gaps.
    budget : int, optional
        Maximum number of node QPs.  Required when ``N * n_lambda`` exceeds 40.
        On exhaustion the incumbent is returned with ``suboptimal=True``.
    seed_inputs : array, optional
        Input sequence whose LCS rollout seeds the incumbent.  By default one
        C3 solve with the LCP projection provides it.
    """
    t0 = time.perf_counter()
    lay = spec.layout
    nbin = lay.N * lay.n_lambda
    if nbin > MODE_CAP and budget is None:
        raise ValueError(f"{nbin} binaries exceed the cap of {MODE_CAP}; pass an explicit budget")
    node = _NodeProblem(spec, big_m)
    best_v, best_obj, best_modes = None, np.inf, None
    seeded = False
    if nbin > 0:
        if seed_inputs is None and seed_with_c3:
            seed_inputs = _c3_seed(spec)
        if seed_inputs is not None:
            s = _seed(spec, node, np.asarray(seed_inputs, dtype=float).reshape(lay.N, lay.n_u))
            if s is not None:
                best_v, best_obj, best_modes = s
                seeded = True

    root = MiqpNode(np.full((lay.N, lay.n_lambda), FREE, dtype=np.int64), -np.inf, best_obj)
    stack = [root]
    nodes = 0
    exhausted = False
    while stack:
        item = stack.pop()
        cutoff = best_obj - REL_GAP * max(1.0, abs(best_obj))
        if item.bound >= cutoff:
            continue
        if budget is not None and nodes >= budget:
            exhausted = True
            break
        modes = item.modes
        nodes += 1
        sol = solve_qp(node.qp(modes))
        if not sol.optimal:
            continue
        obj = sol.objective
        if obj >= cutoff:
            continue
        lam, gap = node.pairs(sol.v)
        prod = np.maximum(lam, 0.0) * np.maximum(gap, 0.0)
        free = modes == FREE
        viol = free & (prod > tol * (1.0 + np.maximum(lam, gap)))
        if not viol.any():
            # the relaxation is already complementary: fix its modes and accept
            best_v, best_obj = sol.v, obj
            best_modes = np.where(free, np.where(lam <= gap, OPEN, CLOSED), modes)
            continue
        # chronological: earliest step with a violated pair, then the worst pair
        k = int(np.argmax(viol.any(axis=1)))
        i = int(np.argmax(np.where(viol[k], prod[k], -np.inf)))
        first, second = (CLOSED, OPEN) if lam[k, i] > gap[k, i] else (OPEN, CLOSED)
        for choice in (second, first):  # LIFO: ``first`` is explored next
            child = modes.copy()
            child[k, i] = choice
            stack.append(MiqpNode(child, obj, best_obj))

    if best_v is None:
        if exhausted:
            raise MiqpInfeasible(f"budget of {budget} nodes exhausted without a feasible point")
        raise MiqpInfeasible("no mode sequence is feasible")
    xs, lams, us = lay.split(best_v)
    return MiqpResult(
        states=xs,
        forces=lams,
        inputs=us,
        objective=float(best_obj),
        modes=np.asarray(best_modes, dtype=np.int64),
        nodes=nodes,
        suboptimal=exhausted,
        seeded=seeded,
        elapsed=time.perf_counter() - t0,
    )


def enumerate_mode_sequences(spec: McpProblemSpec, big_m: float = DEFAULT_BIG_M):
    """Exhaustive reference: best objective over all ``2**(N n_lambda)`` mode sequences."""
    lay = spec.layout
    nbin = lay.N * lay.n_lambda
    if nbin > 16:
        raise ValueError("enumeration limited to 16 binaries")
    node = _NodeProblem(spec, big_m)
    best = (np.inf, None, None)
    for bits in itertools.product((OPEN, CLOSED), repeat=nbin):
        modes = np.array(bits, dtype=np.int64).reshape(lay.N, lay.n_lambda)
        sol = solve_qp(node.qp(modes))
        if sol.optimal:
            obj = sol.objective
            if obj < best[0]:
                best = (obj, sol.v, modes)
    return best


def check_complementarity(spec: McpProblemSpec, result: MiqpResult) -> float:
    """Largest complementarity residual of the returned forces and gaps."""
    m = spec.model
    worst = 0.0
    for k in range(spec.N):
        y = m.gap(result.states[k], result.forces[k], result.inputs[k])
        worst = max(worst, complementarity_residual(result.forces[k], y))
    return worst
