import csv
import json
import math

import numpy as np
import pytest

from c3mpc.controller import C3Config
from c3mpc.harness import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    bench_projection,
    compare_cost_to_go,
    run_experiment,
    run_open_loop,
    summarize_trial_csv,
)
from c3mpc.lcs import LcsModel


def _double_integrator():
    return LcsModel(
        [[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]], np.zeros((2, 0)), [0.0, 0.0],
        np.zeros((0, 2)), np.zeros((0, 0)), np.zeros((0, 1)), np.zeros(0),
    )


def _short_cartpole(**changes):
    base = {"preset": "cartpole-sim", "trials": 3, "duration": 0.5}
    base.update(changes)
    return ExperimentConfig.from_dict(base)


def test_presets_build():
    for name in PRESETS:
        cfg = ExperimentConfig.preset(name)
        spec = cfg.build_problem()
        assert isinstance(cfg.build_controller_config(), C3Config)
        assert spec.N == cfg.N


def test_load_yaml_merges_preset(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("preset: cartpole-sim\ntrials: 4\ncontroller:\n  projection: admm\n")
    cfg = ExperimentConfig.load(path)
    assert cfg.trials == 4
    assert cfg.controller["projection"] == "admm"
    assert cfg.controller["theta"] == 10
    assert cfg.Q == PRESETS["cartpole-sim"]["Q"]


def test_load_json(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"preset": "cartpole-push", "seed": 7}))
    cfg = ExperimentConfig.load(path)
    assert cfg.seed == 7 and cfg.model == "cartpole-hw"


@pytest.mark.parametrize(
    "data",
    [
        {"preset": "unknown"},
        {"banana": 1},
        {"N": 0},
        {"controller": {"projection": "simplex"}},
        {"controller": {"alpha": 1}},
        {"disturbance": {"kind": "wind"}},
        {"success": {"mode": "sometimes"}},
        {"model": "pendulum"},
        {"QN": "lqr"},
    ],
)
def test_invalid_configs_raise_config_error(data):
    with pytest.raises(ConfigError):
        cfg = ExperimentConfig.from_dict(data)
        cfg.build_problem()


def test_unparsable_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("trials: [1, 2\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_replace_merges_controller():
    cfg = ExperimentConfig.preset("cartpole-sim").replace(controller={"theta": 3})
    assert cfg.controller["theta"] == 3 and cfg.controller["rho"] == 2.0


def test_hold_from_control_rate():
    cfg = ExperimentConfig.preset("cartpole-sim")
    assert cfg.hold == 1
    assert cfg.replace(control_rate=100.0).hold == 1
    assert cfg.replace(control_rate=30.0).hold == 4
    assert cfg.replace(control_rate=10.0).hold == 10


def test_zero_state_trial_is_trivially_stabilized(tmp_path):
    cfg = ExperimentConfig.preset("cartpole-sim", trials=1, initial={"x0": [0.0, 0.0, 0.0, 0.0]})
    table = run_experiment(cfg, tmp_path)
    row = table.rows[0]
    assert row.stabilized and row.error == ""
    assert row.cost == pytest.approx(0.0, abs=1e-12)
    assert len(table.rows) == cfg.trials


def test_csv_outputs_are_byte_identical(tmp_path):
    cfg = _short_cartpole()
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ["summary.csv"] + [f"trial_{i:03d}.csv" for i in range(cfg.trials)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trial_csv_columns(tmp_path):
    cfg = _short_cartpole(trials=1)
    run_experiment(cfg, tmp_path)
    with open(tmp_path / "trial_000.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "x0", "x1", "x2", "x3", "lam0", "lam1", "u0", "stage_cost", "qp_ms", "proj_ms"]


def test_summary_recomputable_from_trial_csvs(tmp_path):
    cfg = _short_cartpole()
    table = run_experiment(cfg, tmp_path)
    with open(tmp_path / "summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == cfg.trials
    for row, rec in zip(summary, table.rows):
        again = summarize_trial_csv(tmp_path / f"trial_{rec.trial:03d}.csv", cfg.dt)
        assert again["steps"] == int(row["steps"]) == rec.steps
        assert again["cost"] == pytest.approx(float(row["cost"]), rel=1e-12)
        with open(tmp_path / f"trial_{rec.trial:03d}.csv") as fh:
            rows = list(csv.DictReader(fh))
        last = np.array([float(rows[-1][f"x{i}"]) for i in range(4)])
        assert rec.steps == len(rows)
        assert np.isfinite(last).all()


def test_timing_columns_when_requested(tmp_path):
    cfg = _short_cartpole(trials=1, outputs={"timing": True})
    table = run_experiment(cfg, tmp_path)
    assert table.rows[0].proj_mean_ms > 0
    with open(tmp_path / "trial_000.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["proj_ms"]) > 0


def test_results_do_not_depend_on_worker_count(tmp_path):
    cfg = _short_cartpole()
    seq = run_experiment(cfg, tmp_path / "seq")
    par = run_experiment(cfg.replace(workers=2), tmp_path / "par")
    assert [r.cost for r in seq.rows] == [r.cost for r in par.rows]
    for name in ["summary.csv"] + [f"trial_{i:03d}.csv" for i in range(cfg.trials)]:
        assert (tmp_path / "seq" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_trials_use_distinct_seeds():
    table = run_experiment(_short_cartpole(trials=4))
    assert len({r.cost for r in table.rows}) == 4


def test_solver_failure_is_recorded_and_run_continues(tmp_path):
    cfg = _short_cartpole(trials=2, bounds={"u_lb": [1.0], "u_ub": [-1.0]})
    table = run_experiment(cfg, tmp_path)
    assert len(table.rows) == 2
    assert all(not r.stabilized and r.error for r in table.rows)


def test_hold_success_mode():
    cfg = ExperimentConfig.from_dict(
        {
            "model": _double_integrator().to_dict(),
            "dt": 0.1, "N": 5, "Q": [1.0, 1.0], "R": [1.0], "QN": "dare",
            "duration": 6.0, "initial": {"x0": [1.0, 0.0]},
            "success": {"mode": "hold", "tol": 0.1, "hold": 1.0},
        }
    )
    assert run_experiment(cfg).rows[0].stabilized
    short = cfg.replace(duration=0.5)
    assert not run_experiment(short).rows[0].stabilized


def test_push_disturbance_moves_the_cart(tmp_path):
    cfg = ExperimentConfig.preset("cartpole-push", trials=1, duration=0.3, success={"mode": "hold", "tol": 0.05})
    run_experiment(cfg, tmp_path)
    with open(tmp_path / "trial_000.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[5]["x2"]) > 0.1


def test_open_loop_rollout(tmp_path):
    cfg = ExperimentConfig.preset("cartpole-sim", initial={"x0": [0.0, 0.1, 0.0, 0.0]}, duration=0.5)
    traj = run_open_loop(cfg, tmp_path)
    assert traj.T == 50
    assert (tmp_path / "rollout.csv").exists()
    assert traj.states[-1, 1] > 0.1


def test_compare_contact_free_series_coincide(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {
            "model": _double_integrator().to_dict(),
            "dt": 0.1, "N": 5, "Q": [1.0, 1.0], "R": [1.0], "QN": "dare",
            "duration": 2.0, "initial": {"x0": [1.0, 0.0]},
            "success": {"mode": "hold", "tol": 0.1, "hold": 0.5},
        }
    )
    samples = compare_cost_to_go(cfg, tmp_path / "cost.csv")
    assert (tmp_path / "cost.csv").exists()
    full = [s for s in samples if not math.isnan(s.realized_cost)]
    assert len(full) == 16
    for s in full:
        assert s.c3_cost == pytest.approx(s.baseline_cost, rel=1e-10)
        assert s.realized_cost == pytest.approx(s.c3_cost, rel=1e-10)


def test_compare_contact_rich_baseline_is_lower():
    cfg = ExperimentConfig.preset(
        "cartpole-sim", trials=1, duration=0.3, initial={"x0": [0.3, 0.2, 1.0, 0.5]},
        success={"mode": "hold", "tol": 0.05},
    )
    samples = compare_cost_to_go(cfg)
    assert len(samples) == 30
    for s in samples:
        assert s.baseline_cost <= s.c3_cost * (1 + 1e-6) + 1e-9


def test_projection_benchmark_rows(tmp_path):
    cfg = ExperimentConfig.preset("cartpole-sim", trials=1)
    rows = bench_projection(cfg, calls=30, out_path=tmp_path / "t.csv", repeats=1)
    assert [r.method for r in rows] == ["miqp", "lcp", "admm"]
    assert all(r.calls == 30 and r.mean_s > 0 for r in rows)
    exact = rows[0].mean_distance
    assert rows[1].mean_distance >= exact * (1 - 1e-9)
