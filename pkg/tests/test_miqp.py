import itertools

import numpy as np
import pytest
from scipy.optimize import minimize

from c3mpc.controller import C3Config, c3_solve, cost_to_go
from c3mpc.harness import ExperimentConfig
from c3mpc.lcs import LcsModel
from c3mpc.miqp import (
    CLOSED,
    OPEN,
    MiqpInfeasible,
    check_complementarity,
    enumerate_mode_sequences,
    solve_full_miqp,
)
from c3mpc.problem import McpProblemSpec, stage_bounds
from c3mpc.qp import assemble_mpc_qp, solve_qp

from .helpers import pushed_contact_model


def _wall_model():
    """Point mass next to a compliant wall at position -1."""
    return LcsModel(
        A=[[1.0, 0.1], [0.0, 1.0]],
        B=[[0.0], [0.1]],
        D=[[0.0], [0.1]],
        d=[0.0, 0.0],
        E=[[1.0, 0.1]],
        F=[[0.5]],
        H=[[0.0]],
        c=[1.0],
    )


def _scipy_mode_oracle(spec, big_m=1000.0):
    """Best objective over all mode sequences, each solved with SLSQP."""
    m, N = spec.model, spec.N
    nx, nl, nu = m.n_x, m.n_lambda, m.n_u
    best = np.inf

    def unpack(v):
        lam = v[: N * nl].reshape(N, nl)
        u = v[N * nl :].reshape(N, nu)
        xs = [spec.x0]
        for k in range(N):
            xs.append(m.A @ xs[k] + m.B @ u[k] + m.D @ lam[k] + m.d)
        return np.array(xs), lam, u

    def objective(v):
        xs, _, u = unpack(v)
        return spec.cost(xs, u)

    def gaps(v):
        xs, lam, u = unpack(v)
        return np.array([m.E @ xs[k] + m.F @ lam[k] + m.H @ u[k] + m.c for k in range(N)]).ravel()

    for bits in itertools.product((OPEN, CLOSED), repeat=N * nl):
        bits = np.array(bits)
        cons = [
            {"type": "eq", "fun": lambda v, b=bits: np.where(b == OPEN, v[: N * nl], gaps(v))},
            {"type": "ineq", "fun": lambda v: v[: N * nl]},
            {"type": "ineq", "fun": gaps},
            {"type": "ineq", "fun": lambda v: big_m - v[: N * nl]},
            {"type": "ineq", "fun": lambda v: big_m - gaps(v)},
        ]
        res = minimize(objective, np.zeros(N * (nl + nu)), constraints=cons, method="SLSQP",
                       options={"ftol": 1e-12, "maxiter": 500})
        feasible = res.success and all(
            np.all(c["fun"](res.x) >= -1e-7) if c["type"] == "ineq" else np.allclose(c["fun"](res.x), 0, atol=1e-7)
            for c in cons
        )
        if feasible:
            best = min(best, res.fun)
    return best


def _wall_spec(x0, N=2):
    return McpProblemSpec(_wall_model(), N, np.diag([10.0, 1.0]), [[0.1]], np.diag([10.0, 1.0]), x0, x_ref=[-1.5, 0.0])


@pytest.mark.parametrize("x0", [(-0.8, -1.0), (-0.95, 0.0), (0.5, -3.0)])
def test_two_step_toy_matches_independent_enumeration(x0):
    spec = _wall_spec(np.array(x0))
    res = solve_full_miqp(spec)
    assert res.objective == pytest.approx(_scipy_mode_oracle(spec), rel=1e-5, abs=1e-6)


def test_matches_mode_enumeration_on_random_states(rng):
    for _ in range(6):
        N = int(rng.integers(1, 7))
        spec = _wall_spec(rng.uniform([-1.5, -3.0], [1.0, 3.0]), N=N)
        res = solve_full_miqp(spec, seed_with_c3=bool(rng.integers(0, 2)))
        best, _, _ = enumerate_mode_sequences(spec)
        assert res.objective == pytest.approx(best, rel=1e-8, abs=1e-8)
        assert not res.suboptimal


def test_cartpole_matches_enumeration_short_horizon():
    cfg = ExperimentConfig.preset("cartpole-sim").replace(N=4)
    spec = cfg.build_problem().with_x0(np.array([0.3, 0.1, 1.0, 0.5]))
    res = solve_full_miqp(spec)
    best, _, _ = enumerate_mode_sequences(spec)
    assert res.objective == pytest.approx(best, rel=1e-8)


def test_contact_free_equals_lq():
    m = LcsModel([[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]], np.zeros((2, 0)), [0, 0],
                 np.zeros((0, 2)), np.zeros((0, 0)), np.zeros((0, 1)), np.zeros(0))
    spec = McpProblemSpec(m, 6, np.eye(2), [[0.2]], np.eye(2), [1.0, 0.0])
    lq = solve_qp(assemble_mpc_qp(None, spec, np.zeros((6, 3)), np.zeros((6, 3)), 0.0))
    res = solve_full_miqp(spec)
    assert res.objective == pytest.approx(lq.objective, rel=1e-10)
    assert res.nodes == 1


def test_solution_is_complementary_and_rolls_out(rng):
    spec = ExperimentConfig.preset("cartpole-sim").build_problem()
    for _ in range(3):
        spec_i = spec.with_x0(rng.uniform([-0.3, -0.3, -1, -1], [0.3, 0.3, 1, 1]))
        res = solve_full_miqp(spec_i)
        assert check_complementarity(spec_i, res) < 1e-7
        assert cost_to_go(spec_i, res.inputs) == pytest.approx(res.objective, rel=1e-7)


def test_dominates_c3_rollout_cost(rng):
    spec = ExperimentConfig.preset("cartpole-sim").build_problem()
    for _ in range(50):
        spec_i = spec.with_x0(rng.uniform([-0.35, -0.3, -1, -1], [0.35, 0.3, 1, 1]))
        base = solve_full_miqp(spec_i)
        c3 = cost_to_go(spec_i, c3_solve(spec_i, C3Config()).inputs)
        assert base.objective <= c3 * (1 + 1e-6) + 1e-6


def test_budget_flags_suboptimal():
    spec = ExperimentConfig.preset("cartpole-sim").build_problem().with_x0(np.array([0.3, 0.3, 1.0, 1.0]))
    res = solve_full_miqp(spec, budget=1)
    assert res.suboptimal and res.seeded and res.nodes == 1


def test_large_problem_requires_budget():
    cfg = ExperimentConfig.preset("cartpole-sim").replace(N=25)
    with pytest.raises(ValueError):
        solve_full_miqp(cfg.build_problem())


def test_infeasible_certified():
    spec = McpProblemSpec(pushed_contact_model(), 3, [[1.0]], [[1.0]], [[1.0]], [0.5])
    Ain, bin_ = stage_bounds(spec.layout, u_lb=[2.0], u_ub=[1.0])
    bad = McpProblemSpec(spec.model, 3, [[1.0]], [[1.0]], [[1.0]], [0.5], Ain, bin_)
    with pytest.raises(MiqpInfeasible):
        solve_full_miqp(bad)
