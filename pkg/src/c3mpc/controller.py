"""Consensus complementarity control (C3).

Each control step runs a fixed number ``theta`` of consensus-ADMM
iterations on the contact MPC problem:

1. quadratic step: minimize the MPC cost plus
   ``sum_k (z_k - delta_k + w_k)' G_k (z_k - delta_k + w_k)`` subject to the
   dynamics and the convex constraints (complementarity dropped);
2. projection step: ``delta_k`` = projection of ``z_k + w_k`` onto the
   complementarity set of step ``k``, independently for every ``k``;
3. dual update ``w_k <- w_k + z_k - delta_k``;
4. ``G_k <- rho_k G_k`` and ``w_k <- w_k / rho_k``.

The first input of the final quadratic-step iterate is applied.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .lcs import LcpError, LcsModel, Trajectory, lcs_step
from .problem import McpProblemSpec, StackLayout
from .projections import (
    DEFAULT_BIG_M,
    ComplementaritySet,
    ProjectionError,
    ProjectionTarget,
    default_weight,
    project_lcp_batch,
    project_miqp,
    project_nested_admm,
)
from .qp import KktFactor, QuadraticProgram, chol_inv_t, mpc_equalities, mpc_hessian, solve_qp

PROJECTION_METHODS = ("miqp", "lcp", "admm")


class C3Error(RuntimeError):
    """A quadratic or projection step failed; carries where it happened."""

    def __init__(self, message, iteration=None, step=None):
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if step is not None:
            where.append(f"k={step}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.iteration = iteration
        self.step = step


@dataclass
class C3Config:
    """Settings of the ADMM loop.

    ``G`` is a scalar (times identity), one ``n_z x n_z`` matrix or one per
    step; ``rho`` a scalar or one value per step.  ``U`` defaults to
    ``diag(u_weights[0] I, u_weights[1] I, u_weights[2] I)`` over the
    ``(x, lam, u)`` slices.

    ``warm_start`` seeds each control step with the previous step's
    ``delta`` and ``w`` shifted by one stage; ``w`` is multiplied back by
    ``rho**theta`` so that ``G w`` (the unscaled multiplier) carries over
    unchanged when ``G`` is reset.  The first call after :meth:`C3Controller.reset`
    uses ``delta0``/``w0``.
    """

    theta: int = 10
    G: Union[float, np.ndarray] = 0.1
    rho: Union[float, np.ndarray] = 2.0
    projection: str = "lcp"
    U: Optional[np.ndarray] = None
    u_weights: tuple = (1.0, 0.01, 1.0)
    big_m: float = DEFAULT_BIG_M
    admm_iters: int = 30
    admm_rho: float = 1.0
    delta0: Optional[np.ndarray] = None
    w0: Optional[np.ndarray] = None
    warm_start: bool = False
    workers: int = 0
    record_history: bool = False

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("theta must be >= 1")
        if np.any(np.asarray(self.rho) <= 0):
            raise ValueError("rho must be positive")
        if self.projection not in PROJECTION_METHODS:
            raise ValueError(f"projection must be one of {PROJECTION_METHODS}")


@dataclass
class C3Workspace:
    z: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    G: np.ndarray
    residuals: List[np.ndarray] = field(default_factory=list)


@dataclass
class C3StepResult:
    u0: np.ndarray
    z: np.ndarray
    states: np.ndarray
    forces: np.ndarray
    inputs: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    primal_residuals: np.ndarray
    complementarity_residuals: np.ndarray
    qp_objectives: np.ndarray
    timing: dict
    projection_times: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def _per_step(val, N, name):
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(N, float(arr))
    if arr.shape != (N,):
        raise ValueError(f"{name} must be a scalar or have {N} entries")
    return arr.copy()


def _weights(G, lay: StackLayout):
    G = np.asarray(G, dtype=float)
    if G.ndim == 0:
        G = G * np.eye(lay.n_z)
    if G.ndim == 2:
        G = np.broadcast_to(G, (lay.N, lay.n_z, lay.n_z))
    if G.shape != (lay.N, lay.n_z, lay.n_z):
        raise ValueError(f"G must be {lay.n_z}x{lay.n_z} or per step")
    G = np.array(G)
    for k in range(lay.N):
        try:
            np.linalg.cholesky(0.5 * (G[k] + G[k].T))
        except np.linalg.LinAlgError:
            raise ValueError(f"G[{k}] must be positive definite") from None
    return G


class C3Controller:
    """Receding-horizon C3 controller for a fixed problem template.

    Factorizations of the quadratic step depend only on the model, costs
    and the iteration index (through the ``rho`` scaling of ``G``), so they
    are computed once per model and reused across control steps.
    """

    def __init__(self, spec: McpProblemSpec, config: C3Config):
        self.spec = spec
        self.config = config
        self.layout = spec.layout
        lay = self.layout
        self.G0 = _weights(config.G, lay)
        # without contact forces the projection is the identity, so the
        # consensus term is dropped and every iteration is the LQ-MPC step
        self._consensus = 1.0 if lay.n_lambda > 0 else 0.0
        self.rho = _per_step(config.rho, lay.N, "rho")
        U = config.U
        if U is None:
            U = default_weight(lay.n_x, lay.n_lambda, lay.n_u, *config.u_weights)
        self.U = np.ascontiguousarray(np.asarray(U, dtype=float))
        if self.U.shape != (lay.n_z, lay.n_z):
            raise ValueError(f"U must be {lay.n_z}x{lay.n_z}")
        self._model = None
        self._prev = None
        self._pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        self._set_model(spec.model)

    def reset(self):
        """Forget the warm-start state."""
        self._prev = None

    # -- caches ---------------------------------------------------------
    def _set_model(self, model: LcsModel):
        if model is self._model:
            return
        self._model = model
        self.spec = self.spec.with_model(model)
        self.cset = ComplementaritySet.from_model(model)
        self._Aeq, beq = mpc_equalities(self.spec)
        self._beq_dyn = beq[self.layout.n_x:].copy()
        self._r_ref, self._c_ref = self.spec.reference_terms()
        self._factors = {}

    def _gscale(self, i):
        # G_k at iteration i (0-based) is rho_k^i G_k^0
        return self.rho**i

    def _factor(self, i):
        f = self._factors.get(i)
        if f is None:
            G = self._consensus * self.G0 * self._gscale(i)[:, None, None]
            P = mpc_hessian(self.spec, G)
            if self.spec.has_inequalities:
                f = (P, chol_inv_t(P))
            else:
                f = (P, KktFactor(P, self._Aeq))
            self._factors[i] = f
        return f

    # -- steps ------------------------------------------------------------
    def _quadratic_step(self, i, x0, delta, w, G):
        lay = self.layout
        P, fac = self._factor(i)
        e = w - delta
        ge = self._consensus * np.einsum("kij,kj->ki", G, e)
        r = self._r_ref.copy()
        r[: lay.N * lay.n_z] += 2.0 * ge.ravel()
        const = float(np.sum(e * ge)) + self._c_ref
        beq = np.concatenate([x0, self._beq_dyn])
        if isinstance(fac, KktFactor):
            v, _ = fac.solve(r, beq)
            obj = float(0.5 * v @ P @ v + r @ v + const)
            return v, obj
        qp = QuadraticProgram(P, r, self._Aeq, beq, self.spec.Ain, self.spec.bin, const)
        sol = solve_qp(qp, chol_factor=fac)
        if not sol.optimal:
            raise C3Error(f"quadratic step {sol.status.value}", iteration=i)
        return sol.v, sol.objective

    def _project_one(self, k, point):
        target = ProjectionTarget(point, self.U)
        cfg = self.config
        if cfg.projection == "miqp":
            return project_miqp(target, self.cset, big_m=cfg.big_m).delta
        return project_nested_admm(target, self.cset, cfg.admm_iters, cfg.admm_rho).delta

    def _projection_step(self, i, targets):
        if self.config.projection == "lcp":
            try:
                return project_lcp_batch(targets, self.cset)
            except ProjectionError as exc:
                raise C3Error(str(exc), iteration=i) from exc
        out = np.empty_like(targets)

        def run(k):
            try:
                out[k] = self._project_one(k, targets[k])
            except ProjectionError as exc:
                raise C3Error(str(exc), iteration=i, step=k) from exc

        if self._pool is not None:
            list(self._pool.map(run, range(targets.shape[0])))
        else:
            for k in range(targets.shape[0]):
                run(k)
        return out

    def _initial(self, name, lay):
        val = getattr(self.config, name)
        if val is None:
            return np.zeros((lay.N, lay.n_z))
        return np.array(val, dtype=float).reshape(lay.N, lay.n_z)

    def solve(self, x0=None, model: Optional[LcsModel] = None) -> C3StepResult:
        """Run ``theta`` ADMM iterations from state ``x0`` and return ``u0``."""
        if model is not None:
            self._set_model(model)
        lay = self.layout
        cfg = self.config
        x0 = self.spec.x0 if x0 is None else np.asarray(x0, dtype=float).reshape(lay.n_x)
        delta = self._initial("delta0", lay)
        w = self._initial("w0", lay)
        if cfg.warm_start and self._prev is not None:
            # shift one step; w is stored rescaled to the reset G
            prev_delta, prev_w = self._prev
            delta = np.vstack([prev_delta[1:], prev_delta[-1:]])
            w = np.vstack([prev_w[1:], prev_w[-1:]])
        G = self.G0.copy()
        t_qp = t_proj = t_dual = 0.0
        proj_times = np.zeros(cfg.theta)
        prim = np.zeros(cfg.theta)
        comp = np.zeros(cfg.theta)
        objs = np.zeros(cfg.theta)
        history = []
        z = None
        for i in range(cfg.theta):
            t0 = time.perf_counter()
            z, objs[i] = self._quadratic_step(i, x0, delta, w, G)
            t1 = time.perf_counter()
            blocks = lay.blocks(z)
            delta = self._projection_step(i, blocks + w)
            t2 = time.perf_counter()
            w_before = w
            w = w + blocks - delta
            w = w / self.rho[:, None]
            G = G * self.rho[:, None, None]
            t3 = time.perf_counter()
            t_qp += t1 - t0
            t_proj += t2 - t1
            t_dual += t3 - t2
            proj_times[i] = t2 - t1
            prim[i] = float(np.abs(blocks - delta).max())
            comp[i] = max(
                (self.cset.residual(blocks[k]) for k in range(lay.N)), default=0.0
            )
            if cfg.record_history:
                history.append(
                    {"z": z.copy(), "delta": delta.copy(), "w_before": w_before.copy(), "w": w.copy(), "G": G.copy()}
                )
        self._prev = (delta, w * (self.rho ** cfg.theta)[:, None])
        xs, lams, us = lay.split(z)
        return C3StepResult(
            u0=us[0].copy(),
            z=z,
            states=xs,
            forces=lams,
            inputs=us,
            delta=delta,
            w=w,
            primal_residuals=prim,
            complementarity_residuals=comp,
            qp_objectives=objs,
            timing={"qp": t_qp, "projection": t_proj, "dual": t_dual},
            projection_times=proj_times,
            iterations=cfg.theta,
            history=history,
        )


def c3_solve(spec: McpProblemSpec, config: C3Config) -> C3StepResult:
    """One C3 control step from ``spec.x0``."""
    return C3Controller(spec, config).solve(spec.x0)


def cost_to_go(spec: McpProblemSpec, inputs, x0=None) -> float:
    """MPC cost of rolling ``inputs`` (first ``N`` used) through the LCS."""
    us = np.asarray(inputs, dtype=float).reshape(-1, spec.model.n_u)
    if us.shape[0] < spec.N:
        raise ValueError(f"need at least N={spec.N} inputs, got {us.shape[0]}")
    us = us[: spec.N]
    xs = np.zeros((spec.N + 1, spec.model.n_x))
    xs[0] = spec.x0 if x0 is None else x0
    for k in range(spec.N):
        xs[k + 1] = lcs_step(spec.model, xs[k], us[k], step=k)[0]
    return spec.cost(xs, us)


class LcsPlant:
    """Plant oracle that steps an LCS, optionally with Gaussian state noise."""

    def __init__(self, model: LcsModel, noise_std: float = 0.0, seed: Optional[int] = None):
        self.model = model
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)

    def __call__(self, x, u):
        x_next, lam, y = lcs_step(self.model, x, u)
        if self.noise_std > 0:
            x_next = x_next + self.rng.normal(0.0, self.noise_std, size=x_next.shape)
        return x_next, lam, y


@dataclass
class RecedingHorizonResult:
    trajectory: Trajectory
    steps: List[C3StepResult]
    error: Optional[str] = None
    failed_step: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def c3_receding_horizon(
    plant: Callable,
    spec: McpProblemSpec,
    config: C3Config,
    T_steps: int,
    relinearize: Optional[Callable[[np.ndarray, np.ndarray], LcsModel]] = None,
    x0=None,
    hold: int = 1,
    disturbance: Optional[Callable[[int], np.ndarray]] = None,
    stop: Optional[Callable[[int, np.ndarray], bool]] = None,
    controller: Optional[C3Controller] = None,
) -> RecedingHorizonResult:
    """Closed-loop C3.

    ``plant(x, u)`` returns the next state, or ``(x_next, lam, gap)``.  The
    controller is re-solved every ``hold`` plant steps (zero-order hold in
    between).  ``relinearize(x, u_prev)`` supplies a fresh LCS each control
    step.  ``disturbance(t)`` is added to the applied input at plant step
    ``t``.  ``stop(t, x)`` ends the run early.  Failures end the run and
    the partial log is returned with ``error`` set.
    """
    ctrl = controller if controller is not None else C3Controller(spec, config)
    ctrl.reset()
    model = spec.model
    nx, nl, nu = model.n_x, model.n_lambda, model.n_u
    x = np.asarray(spec.x0 if x0 is None else x0, dtype=float).copy()
    xs, lams, us, gaps, costs = [x.copy()], [], [], [], []
    steps: List[C3StepResult] = []
    u_prev = np.zeros(nu)
    u = u_prev
    error = failed = None
    Q0, R0, x_ref = spec.Q[0], spec.R[0], spec.x_ref
    for t in range(T_steps):
        try:
            if t % hold == 0:
                m = relinearize(x, u_prev) if relinearize is not None else None
                res = ctrl.solve(x, model=m)
                steps.append(res)
                u = res.u0
            u_applied = u if disturbance is None else u + np.asarray(disturbance(t), dtype=float)
            out = plant(x, u_applied)
        except (C3Error, LcpError, ProjectionError, np.linalg.LinAlgError) as exc:
            error, failed = str(exc), t
            break
        if isinstance(out, tuple):
            x_next, lam, y = out
        else:
            x_next, lam, y = out, np.full(nl, np.nan), np.full(nl, np.nan)
        dx = x - x_ref
        costs.append(float(dx @ Q0 @ dx + u_applied @ R0 @ u_applied))
        us.append(np.asarray(u_applied, dtype=float))
        lams.append(lam)
        gaps.append(y)
        x = np.asarray(x_next, dtype=float)
        xs.append(x.copy())
        u_prev = u_applied
        if stop is not None and stop(t + 1, x):
            break
    T = len(us)
    traj = Trajectory(
        np.array(xs).reshape(T + 1, nx),
        np.array(lams).reshape(T, nl),
        np.array(us).reshape(T, nu),
        np.array(gaps).reshape(T, nl),
        np.array(costs),
    )
    return RecedingHorizonResult(traj, steps, error, failed)
