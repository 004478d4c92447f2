"""Config-driven experiments: closed-loop trials, disturbances, benchmarks.

An :class:`ExperimentConfig` names a model (preset or inline matrices), the
MPC problem, the C3 settings and the trial protocol.  :func:`run_experiment`
executes the seeded trials and writes one CSV per trial plus a summary;
:func:`compare_cost_to_go` logs predicted, baseline and realized horizon
costs along one closed-loop run; :func:`bench_projection` times the three
projections on targets collected from closed-loop C3 runs.

Per-trial randomness comes from ``numpy.random.SeedSequence(seed).spawn``,
so a trial's draws depend only on the master seed and its index.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from scipy.linalg import solve_discrete_are

from .controller import (
    PROJECTION_METHODS,
    C3Config,
    C3Controller,
    C3Error,
    LcsPlant,
    c3_receding_horizon,
    cost_to_go,
)
from .lcs import LcpError, LcsModel, simulate
from .miqp import MiqpInfeasible, solve_full_miqp
from .models import preset_model
from .problem import McpProblemSpec, StackLayout, complementarity_bounds, stage_bounds
from .projections import (
    BigMTooSmall,
    ComplementaritySet,
    ProjectionError,
    ProjectionTarget,
    default_weight,
    project_lcp,
    project_miqp,
    project_nested_admm,
)

SOLVER_ERRORS = (C3Error, LcpError, ProjectionError, MiqpInfeasible, np.linalg.LinAlgError)

PRESETS: Dict[str, dict] = {
    "cartpole-sim": {
        "model": "cartpole-sim",
        "dt": 0.01,
        "N": 10,
        "Q": [100.0, 30.0, 1.0, 1.0],
        "R": [1.0],
        "QN": "dare",
        "controller": {"theta": 10, "G": 0.1, "rho": 2.0, "projection": "lcp", "warm_start": True},
        "trials": 100,
        "seed": 0,
        "initial": {"low": [-0.35, -0.01, -1.0, -1.0], "high": [0.35, 0.01, 1.0, 1.0]},
        "duration": 10.0,
        "success": {"tol": 0.05, "mode": "reach"},
    },
    "cartpole-push": {
        "model": "cartpole-hw",
        "dt": 0.01,
        "N": 10,
        "Q": [100.0, 30.0, 1.0, 1.0],
        "R": [1.0],
        "QN": "dare",
        "controller": {"theta": 10, "G": 0.1, "rho": 2.0, "projection": "lcp", "warm_start": True},
        "trials": 10,
        "seed": 0,
        "initial": {"x0": [0.0, 0.0, 0.0, 0.0]},
        "disturbance": {"kind": "push", "low": 10.0, "high": 15.0, "duration": 0.25, "start": 0.0},
        "duration": 10.25,
        "success": {"tol": 0.05, "mode": "reach", "after": 0.25},
    },
    "finger-gaiting": {
        "model": "finger-gaiting",
        "dt": 0.1,
        "N": 10,
        "Q": [90.7835, 0.078108, 26.1386, 0.013661, 26.1386, 0.013661],
        "R": [0.035947, 0.035947, 0.046428, 0.046428],
        "QN": "Q",
        "x_ref": [0.0, 0.0, 2.0, 0.0, 4.0, 0.0],
        "bounds": {
            "x_lb": [None, None, 1.0, None, 3.0, None],
            "x_ub": [None, None, 3.0, None, 5.0, None],
            "u_lb": [None, None, 0.0, 0.0],
        },
        "complementarity_bounds": True,
        "controller": {
            "theta": 10,
            "G": 1.0,
            "rho": 1.2,
            "projection": "miqp",
            "u_weights": [1.0, 0.063585, 0.038186],
            "warm_start": True,
        },
        "trials": 100,
        "seed": 0,
        "initial": {"low": [-8.0, 0.0, 2.0, 0.0, 3.0, 0.0], "high": [-6.0, 0.0, 3.0, 0.0, 4.0, 0.0]},
        "duration": 10.0,
        "success": {"tol": 0.5, "mode": "hold", "indices": [0], "hold": 2.0},
    },
}

_TOP_KEYS = {
    "preset",
    "name",
    "model",
    "dt",
    "N",
    "Q",
    "R",
    "QN",
    "x_ref",
    "bounds",
    "complementarity_bounds",
    "controller",
    "trials",
    "seed",
    "initial",
    "disturbance",
    "duration",
    "control_rate",
    "success",
    "outputs",
    "workers",
    "inputs",
}


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _bound_vec(vals, dim, fill):
    if vals is None:
        return None
    arr = np.array([fill if v is None else v for v in np.broadcast_to(np.asarray(vals, dtype=object), (dim,))], dtype=float)
    return arr


@dataclass
class ExperimentConfig:
    """One experiment; see ``docs/config.md`` for the file schema.

    ``model`` is a preset name or a dict of LCS matrices.  ``Q``/``R`` are a
    diagonal (list) or a full matrix; ``QN`` is a matrix, a diagonal,
    ``"Q"`` or ``"dare"`` (discrete Riccati solution for ``A, B, Q, R``).
    ``initial`` holds either ``x0`` or uniform ``low``/``high`` bounds.
    ``disturbance`` is ``{"kind": "gaussian", "sigma": s}`` (state noise per
    plant step) or ``{"kind": "push", "low", "high", "duration", "start",
    "index"}`` (input push drawn once per trial).  ``control_rate`` in Hz
    sets the zero-order hold; by default the controller runs every plant
    step.  ``success`` is ``{"tol", "mode": "reach"|"hold", "indices",
    "after", "hold"}`` with the infinity norm of ``x - x_ref`` over
    ``indices``.
    """

    model: Union[str, dict] = "cartpole-sim"
    name: str = ""
    dt: float = 0.01
    N: int = 10
    Q: Any = None
    R: Any = None
    QN: Any = "Q"
    x_ref: Any = None
    bounds: dict = field(default_factory=dict)
    complementarity_bounds: bool = False
    controller: dict = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    initial: dict = field(default_factory=dict)
    disturbance: Optional[dict] = None
    duration: float = 10.0
    control_rate: Optional[float] = None
    success: dict = field(default_factory=lambda: {"tol": 0.05, "mode": "reach"})
    outputs: dict = field(default_factory=lambda: {"trial_csv": True, "summary": True, "timing": False})
    workers: int = 0
    inputs: Any = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.dt <= 0 or self.duration <= 0:
            raise ConfigError("dt and duration must be positive")
        if self.control_rate is not None and self.control_rate <= 0:
            raise ConfigError("control_rate must be positive")
        proj = self.controller.get("projection", "lcp")
        if proj not in PROJECTION_METHODS:
            raise ConfigError(f"projection must be one of {PROJECTION_METHODS}, got {proj!r}")
        if self.disturbance is not None and self.disturbance.get("kind") not in ("gaussian", "push"):
            raise ConfigError("disturbance kind must be 'gaussian' or 'push'")
        if self.success.get("mode", "reach") not in ("reach", "hold"):
            raise ConfigError("success mode must be 'reach' or 'hold'")
        unknown = set(self.controller) - {f.name for f in fields(C3Config)}
        if unknown:
            raise ConfigError(f"unknown controller fields {sorted(unknown)}")

    # construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        preset = data.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            data = _merge(PRESETS[preset], data)
            data.setdefault("name", preset)
        outputs = {"trial_csv": True, "summary": True, "timing": False}
        outputs.update(data.get("outputs") or {})
        data["outputs"] = outputs
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        return cls.from_dict({"preset": name, **overrides})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Read a YAML or JSON file (JSON is valid YAML)."""
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        for key, val in changes.items():
            if key == "controller":
                data["controller"] = {**data["controller"], **val}
            else:
                data[key] = val
        return ExperimentConfig(**data)

    # derived objects ------------------------------------------------------

    def build_model(self) -> LcsModel:
        if isinstance(self.model, str):
            try:
                return preset_model(self.model)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if isinstance(self.model, dict):
            try:
                return LcsModel.from_dict(self.model)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"inline model: {exc}") from None
        raise ConfigError("model must be a preset name or a dict of matrices")

    def build_problem(self, model: Optional[LcsModel] = None) -> McpProblemSpec:
        model = self.build_model() if model is None else model
        Q = _weight(self.Q, model.n_x, "Q")
        R = _weight(self.R, model.n_u, "R")
        if isinstance(self.QN, str):
            if self.QN == "Q":
                QN = Q
            elif self.QN == "dare":
                QN = solve_discrete_are(model.A, model.B, Q, R)
            else:
                raise ConfigError(f"QN must be a matrix, 'Q' or 'dare', got {self.QN!r}")
        else:
            QN = _weight(self.QN, model.n_x, "QN")
        lay = StackLayout.of(model, self.N)
        rows, rhs = [], []
        if self.bounds:
            b = self.bounds
            unknown = set(b) - {"x_lb", "x_ub", "u_lb", "u_ub", "lam_lb", "lam_ub"}
            if unknown:
                raise ConfigError(f"unknown bounds {sorted(unknown)}")
            A, c = stage_bounds(
                lay,
                x_lb=_bound_vec(b.get("x_lb"), model.n_x, -np.inf),
                x_ub=_bound_vec(b.get("x_ub"), model.n_x, np.inf),
                u_lb=_bound_vec(b.get("u_lb"), model.n_u, -np.inf),
                u_ub=_bound_vec(b.get("u_ub"), model.n_u, np.inf),
                lam_lb=_bound_vec(b.get("lam_lb"), model.n_lambda, -np.inf),
                lam_ub=_bound_vec(b.get("lam_ub"), model.n_lambda, np.inf),
            )
            rows.append(A)
            rhs.append(c)
        if self.complementarity_bounds:
            A, c = complementarity_bounds(lay, model)
            rows.append(A)
            rhs.append(c)
        Ain = np.vstack(rows) if rows else None
        bin_ = np.concatenate(rhs) if rows else None
        try:
            return McpProblemSpec(model, self.N, Q, R, QN, np.zeros(model.n_x), Ain, bin_, self.x_ref)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build_controller_config(self, **overrides) -> C3Config:
        data = dict(self.controller)
        data.update(overrides)
        if "u_weights" in data:
            data["u_weights"] = tuple(data["u_weights"])
        try:
            return C3Config(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def hold(self) -> int:
        """Plant steps per control update."""
        if self.control_rate is None:
            return 1
        return max(1, math.ceil((1.0 / self.control_rate) / self.dt - 1e-9))

    def trial_seeds(self) -> List[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed).spawn(self.trials)


def _weight(val, dim, name):
    if val is None:
        return np.eye(dim)
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        if arr.size != dim:
            raise ConfigError(f"{name} diagonal needs {dim} entries")
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise ConfigError(f"{name} must be {dim}x{dim}")
    return arr


# trial execution ----------------------------------------------------------


@dataclass
class TrialRecord:
    trial: int
    stabilized: bool
    steps: int
    final_norm: float
    cost: float
    proj_mean_ms: float
    proj_std_ms: float
    qp_mean_ms: float
    error: str = ""


@dataclass
class ResultsTable:
    """Per-trial outcomes; ``rows`` has one record per trial."""

    name: str
    rows: List[TrialRecord]
    elapsed: float = 0.0

    @property
    def successes(self) -> int:
        return sum(r.stabilized for r in self.rows)

    @property
    def success_rate(self) -> float:
        return self.successes / len(self.rows) if self.rows else 0.0

    def write_csv(self, path: Union[str, Path]) -> None:
        cols = [f.name for f in fields(TrialRecord)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for r in self.rows:
                wr.writerow([_fmt(getattr(r, c)) for c in cols])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _initial_state(cfg: ExperimentConfig, n_x: int, rng: np.random.Generator) -> np.ndarray:
    init = cfg.initial or {}
    if "x0" in init:
        x0 = np.asarray(init["x0"], dtype=float)
    elif "low" in init and "high" in init:
        lo = np.asarray(init["low"], dtype=float)
        hi = np.asarray(init["high"], dtype=float)
        x0 = rng.uniform(lo, hi)
    else:
        x0 = np.zeros(n_x)
    if x0.shape != (n_x,):
        raise ConfigError(f"initial state needs {n_x} entries")
    return x0


def _push(cfg: ExperimentConfig, n_u: int, rng: np.random.Generator):
    d = cfg.disturbance
    magnitude = rng.uniform(d.get("low", 10.0), d.get("high", 15.0))
    start = int(round(d.get("start", 0.0) / cfg.dt))
    stop = start + int(round(d.get("duration", 0.25) / cfg.dt))
    vec = np.zeros(n_u)
    vec[int(d.get("index", 0))] = magnitude

    def disturbance(t):
        return vec if start <= t < stop else np.zeros(n_u)

    return disturbance, magnitude


class _NoisyPlant(LcsPlant):
    def __init__(self, model, sigma, rng):
        super().__init__(model, noise_std=sigma)
        self.rng = rng


def _error_norm(cfg: ExperimentConfig, spec: McpProblemSpec, xs: np.ndarray) -> np.ndarray:
    idx = cfg.success.get("indices")
    err = np.atleast_2d(xs) - spec.x_ref
    if idx is not None:
        err = err[:, idx]
    return np.abs(err).max(axis=1)


def _judge(cfg: ExperimentConfig, spec: McpProblemSpec, xs: np.ndarray, failed: bool) -> bool:
    if failed:
        return False
    tol = float(cfg.success.get("tol", 0.05))
    after = int(round(cfg.success.get("after", 0.0) / cfg.dt))
    norms = _error_norm(cfg, spec, xs)
    if cfg.success.get("mode", "reach") == "reach":
        return bool((norms[after:] < tol).any())
    window = max(1, int(round(cfg.success.get("hold", 1.0) / cfg.dt)))
    return len(norms) > window and bool((norms[-window:] < tol).all())


def _run_trial(cfg: ExperimentConfig, index: int, seed_seq, controller_overrides=None, baseline=False):
    rng = np.random.default_rng(seed_seq)
    model = cfg.build_model()
    spec = cfg.build_problem(model)
    x0 = _initial_state(cfg, model.n_x, rng)
    dist = cfg.disturbance or {}
    sigma = float(dist.get("sigma", 0.0)) if dist.get("kind") == "gaussian" else 0.0
    plant = _NoisyPlant(model, sigma, rng)
    disturbance = None
    if dist.get("kind") == "push":
        disturbance, _ = _push(cfg, model.n_u, rng)
    ccfg = cfg.build_controller_config(**(controller_overrides or {}))
    controller = MiqpController(spec) if baseline else C3Controller(spec, ccfg)
    stop = None
    if cfg.success.get("mode", "reach") == "reach":
        tol = float(cfg.success.get("tol", 0.05))
        after = int(round(cfg.success.get("after", 0.0) / cfg.dt))
        stop = lambda t, x: t >= after and _error_norm(cfg, spec, x)[0] < tol  # noqa: E731
    res = c3_receding_horizon(
        plant, spec, ccfg, cfg.steps, x0=x0, hold=cfg.hold, disturbance=disturbance, stop=stop, controller=controller
    )
    return res, spec


def _trial_columns(model: LcsModel) -> List[str]:
    return (
        ["t"]
        + [f"x{i}" for i in range(model.n_x)]
        + [f"lam{i}" for i in range(model.n_lambda)]
        + [f"u{i}" for i in range(model.n_u)]
        + ["stage_cost", "qp_ms", "proj_ms"]
    )


def _trial_rows(cfg: ExperimentConfig, res, timing: bool):
    traj = res.trajectory
    qp_ms = np.full(traj.T, np.nan)
    proj_ms = np.full(traj.T, np.nan)
    if timing:
        qp_ms[:] = 0.0
        proj_ms[:] = 0.0
        for j, step in enumerate(res.steps):
            t = j * cfg.hold
            if t < traj.T:
                qp_ms[t] = 1e3 * step.timing["qp"]
                proj_ms[t] = 1e3 * step.timing["projection"]
    for t in range(traj.T):
        yield (
            [round(t * cfg.dt, 12)]
            + list(traj.states[t])
            + list(traj.forces[t])
            + list(traj.inputs[t])
            + [traj.stage_costs[t], qp_ms[t], proj_ms[t]]
        )


def _trial_job(args):
    cfg, index, seed_seq, out_dir, controller_overrides, baseline = args
    timing = bool(cfg.outputs.get("timing", False))
    try:
        res, spec = _run_trial(cfg, index, seed_seq, controller_overrides, baseline)
    except SOLVER_ERRORS as exc:
        return TrialRecord(index, False, 0, math.nan, math.nan, math.nan, math.nan, math.nan, _one_line(exc))
    traj = res.trajectory
    if out_dir is not None and cfg.outputs.get("trial_csv", True):
        model = spec.model
        with open(Path(out_dir) / f"trial_{index:03d}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(_trial_columns(model))
            for row in _trial_rows(cfg, res, timing):
                wr.writerow([_fmt(float(v)) for v in row])
    proj = np.array([1e3 * s.timing["projection"] for s in res.steps]) if timing else np.array([])
    qp = np.array([1e3 * s.timing["qp"] for s in res.steps]) if timing else np.array([])
    return TrialRecord(
        trial=index,
        stabilized=_judge(cfg, spec, traj.states, not res.ok),
        steps=traj.T,
        final_norm=float(_error_norm(cfg, spec, traj.states[-1])[0]),
        cost=float(traj.total_cost),
        proj_mean_ms=float(proj.mean()) if proj.size else math.nan,
        proj_std_ms=float(proj.std()) if proj.size else math.nan,
        qp_mean_ms=float(qp.mean()) if qp.size else math.nan,
        error="" if res.ok else _one_line(res.error),
    )


def _one_line(exc) -> str:
    return " ".join(str(exc).split()).replace(",", ";")


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Union[str, Path, None] = None,
    controller_overrides: Optional[dict] = None,
    baseline: bool = False,
) -> ResultsTable:
    """Run every trial of ``cfg``; write ``trial_NNN.csv`` and ``summary.csv``.

    Solver failures are recorded in the trial's ``error`` column and the run
    continues.  ``baseline`` swaps C3 for the full-horizon MIQP controller.
    With ``cfg.workers > 1`` trials run in worker processes; results do not
    depend on the worker count.
    """
    t0 = time.perf_counter()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, i, s, out_dir, controller_overrides, baseline) for i, s in enumerate(cfg.trial_seeds())]
    if cfg.workers and cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_trial_job, jobs))
    else:
        rows = [_trial_job(j) for j in jobs]
    table = ResultsTable(cfg.name or "experiment", rows, time.perf_counter() - t0)
    if out_dir is not None and cfg.outputs.get("summary", True):
        table.write_csv(Path(out_dir) / "summary.csv")
    return table


def summarize_trial_csv(path: Union[str, Path], dt: float) -> dict:
    """Recompute a trial's step count and accumulated cost from its CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {"steps": len(rows), "cost": float(sum(float(r["stage_cost"]) for r in rows))}


# open-loop and baseline ---------------------------------------------------


def run_open_loop(cfg: ExperimentConfig, out_dir: Union[str, Path, None] = None):
    """Roll the model under ``cfg.inputs`` (zeros by default) from trial 0's initial state."""
    model = cfg.build_model()
    rng = np.random.default_rng(cfg.trial_seeds()[0])
    x0 = _initial_state(cfg, model.n_x, rng)
    T = cfg.steps
    if cfg.inputs is None:
        inputs = np.zeros((T, model.n_u))
    else:
        inputs = np.asarray(cfg.inputs, dtype=float).reshape(-1, model.n_u)
        if inputs.shape[0] == 1:
            inputs = np.repeat(inputs, T, axis=0)
    dist = cfg.disturbance or {}
    sigma = float(dist.get("sigma", 0.0)) if dist.get("kind") == "gaussian" else None
    traj = simulate(model, x0, inputs, noise=sigma, seed=int(rng.integers(2**32)))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "rollout.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(
                ["t"]
                + [f"x{i}" for i in range(model.n_x)]
                + [f"lam{i}" for i in range(model.n_lambda)]
                + [f"u{i}" for i in range(model.n_u)]
                + [f"gap{i}" for i in range(model.n_lambda)]
            )
            for t in range(traj.T):
                row = [round(t * cfg.dt, 12), *traj.states[t], *traj.forces[t], *traj.inputs[t], *traj.gaps[t]]
                wr.writerow([_fmt(float(v)) for v in row])
    return traj


@dataclass
class BaselineStep:
    u0: np.ndarray
    inputs: np.ndarray
    objective: float
    suboptimal: bool
    timing: dict


class MiqpController:
    """Receding-horizon controller that solves the full MIQP at every step.

    Has the ``reset``/``solve`` interface used by :func:`c3_receding_horizon`.
    """

    def __init__(self, spec: McpProblemSpec, budget: Optional[int] = None):
        self.spec = spec
        self.budget = budget

    def reset(self):
        pass

    def solve(self, x0, model: Optional[LcsModel] = None) -> BaselineStep:
        spec = self.spec.with_x0(x0) if model is None else self.spec.with_model(model).with_x0(x0)
        budget = self.budget
        if budget is None and spec.N * spec.model.n_lambda > 40:
            budget = 2000
        res = solve_full_miqp(spec, budget=budget)
        return BaselineStep(res.u0.copy(), res.inputs, res.objective, res.suboptimal, {"qp": res.elapsed, "projection": 0.0})


# cost-to-go comparison ----------------------------------------------------


@dataclass
class CostSample:
    step: int
    c3_cost: float
    baseline_cost: float
    realized_cost: float
    baseline_suboptimal: bool
    complementarity_residual: float


def compare_cost_to_go(
    cfg: ExperimentConfig,
    out_path: Union[str, Path, None] = None,
    trial: int = 0,
    baseline_budget: Optional[int] = None,
) -> List[CostSample]:
    """Per control step: predicted C3 cost, MIQP baseline cost, realized cost.

    The C3 and baseline costs roll their input sequences through the model
    from the measured state.  The realized cost is the horizon cost of the
    logged states and inputs over the next ``N`` control steps; it is NaN
    where the run ends before the horizon does.  A baseline that exhausts
    its node budget is flagged and the comparison continues.
    """
    res, spec = _run_trial(cfg, trial, cfg.trial_seeds()[trial])
    if not res.steps:
        raise C3Error(f"closed loop failed before the first control step: {res.error}", step=res.failed_step)
    traj = res.trajectory
    hold = cfg.hold
    samples = []
    for j, step in enumerate(res.steps):
        t = j * hold
        if t >= traj.T:
            break
        local = spec.with_x0(traj.states[t])
        c3 = cost_to_go(local, step.inputs)
        try:
            base = solve_full_miqp(local, budget=baseline_budget)
            b_cost, b_sub = base.objective, base.suboptimal
        except MiqpInfeasible:
            b_cost, b_sub = math.nan, True
        end = t + spec.N * hold
        if end <= traj.T and hold == 1:
            realized = local.cost(traj.states[t : end + 1], traj.inputs[t:end])
        else:
            realized = math.nan
        samples.append(CostSample(j, c3, b_cost, realized, b_sub, float(step.complementarity_residuals[-1])))
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            cols = [f.name for f in fields(CostSample)]
            wr.writerow(cols)
            for s in samples:
                wr.writerow([_fmt(getattr(s, c)) for c in cols])
    return samples


# projection benchmark -----------------------------------------------------


def collect_projection_targets(cfg: ExperimentConfig, count: int) -> List[np.ndarray]:
    """Points ``z_k + w_k`` handed to the projection during closed-loop C3 runs."""
    targets: List[np.ndarray] = []
    model = cfg.build_model()
    spec = cfg.build_problem(model)
    ccfg = cfg.build_controller_config(record_history=True)
    for seed_seq in cfg.trial_seeds():
        rng = np.random.default_rng(seed_seq)
        x0 = _initial_state(cfg, model.n_x, rng)
        ctrl = C3Controller(spec, ccfg)
        res = c3_receding_horizon(LcsPlant(model), spec, ccfg, cfg.steps, x0=x0, hold=cfg.hold, controller=ctrl)
        lay = spec.layout
        for step in res.steps:
            for rec in step.history:
                pts = lay.blocks(rec["z"]) + rec["w_before"]
                targets.extend(pts)
                if len(targets) >= count:
                    return targets[:count]
    if not targets:
        raise ConfigError("closed-loop runs produced no projection targets")
    reps = math.ceil(count / len(targets))
    return (targets * reps)[:count]


@dataclass
class ProjectionBenchmark:
    method: str
    calls: int
    mean_s: float
    std_s: float
    mean_distance: float


def bench_projection(
    cfg: ExperimentConfig,
    calls: int = 1000,
    methods=PROJECTION_METHODS,
    out_path: Union[str, Path, None] = None,
    repeats: int = 3,
) -> List[ProjectionBenchmark]:
    """Wall-clock time per projection call on targets from closed-loop runs.

    Each method first runs a short warm-up (compilation and caches), then
    ``repeats`` timed passes over all targets; the pass with the lowest mean
    is reported, which filters scheduler noise.  ``mean_distance`` is the
    average weighted distance from the target to the returned point.
    """
    model = cfg.build_model()
    ccfg = cfg.build_controller_config()
    cset = ComplementaritySet.from_model(model)
    pts = collect_projection_targets(cfg, calls)
    U = ccfg.U
    if U is None:
        U = default_weight(model.n_x, model.n_lambda, model.n_u, *ccfg.u_weights)
    targets = [ProjectionTarget(p, U) for p in pts]
    project = {
        "lcp": lambda t: project_lcp(t, cset),
        "admm": lambda t: project_nested_admm(t, cset, inner_iters=ccfg.admm_iters, inner_rho=ccfg.admm_rho),
        "miqp": lambda t: project_miqp(t, cset, big_m=ccfg.big_m),
    }
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BigMTooSmall)
        for method in methods:
            fn = project[method]
            for t in targets[:20]:
                fn(t)
            best = None
            for _ in range(max(1, repeats)):
                times = np.zeros(len(targets))
                for i, t in enumerate(targets):
                    t0 = time.perf_counter()
                    fn(t)
                    times[i] = time.perf_counter() - t0
                if best is None or times.mean() < best.mean():
                    best = times
            dist = np.array([t.distance(fn(t).delta) for t in targets])
            out.append(ProjectionBenchmark(method, len(targets), float(best.mean()), float(best.std()), float(dist.mean())))
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            cols = [f.name for f in fields(ProjectionBenchmark)]
            wr.writerow(cols)
            for b in out:
                wr.writerow([_fmt(getattr(b, c)) for c in cols])
    return out


def describe(obj) -> str:
    """JSON text for dataclass results (used by the CLI)."""

    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o).__name__)

    if isinstance(obj, list):
        payload = [asdict(o) for o in obj]
    else:
        payload = asdict(obj)
    return json.dumps(payload, default=conv, allow_nan=True)
