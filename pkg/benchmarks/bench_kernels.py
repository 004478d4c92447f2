"""Compare the numba-compiled kernels with the plain numpy fallback.

Each backend runs in its own interpreter because the backend is fixed at
import time by ``C3MPC_DISABLE_NUMBA``.  Usage::

    python benchmarks/bench_kernels.py [--repeats 200]

Prints one JSON line per backend and a speedup table.  The numba figures
exclude compilation: every kernel is called once before timing.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from c3mpc import _accel, kernels
from c3mpc.harness import ExperimentConfig, collect_projection_targets
from c3mpc.lcs import LcpProblem, solve_lcp
from c3mpc.projections import ComplementaritySet, ProjectionTarget, default_weight, project_lcp, project_miqp, project_nested_admm
from c3mpc.controller import C3Config, c3_solve

repeats = int(sys.argv[1])
rng = np.random.default_rng(0)
cfg = ExperimentConfig.preset("cartpole-sim", trials=1)
spec = cfg.build_problem().with_x0(np.array([0.3, 0.1, 0.5, 0.0]))
model = spec.model
cset = ComplementaritySet.from_model(model)
U = default_weight(model.n_x, model.n_lambda, model.n_u, 1.0, 0.01, 1.0)
targets = [ProjectionTarget(p, U) for p in collect_projection_targets(cfg, 50)]
lcps = []
for _ in range(50):
    A = rng.normal(size=(6, 6))
    lcps.append(LcpProblem(rng.normal(size=6), A @ A.T + 0.5 * np.eye(6)))

cases = {
    "lemke_m6": lambda: [solve_lcp(p, fallback=False) for p in lcps],
    "project_lcp": lambda: [project_lcp(t, cset) for t in targets],
    "project_admm": lambda: [project_nested_admm(t, cset) for t in targets],
    "project_miqp": lambda: [project_miqp(t, cset) for t in targets],
    "c3_solve": lambda: c3_solve(spec, C3Config()),
}
out = {"backend": _accel.backend_name()}
for name, fn in cases.items():
    fn()
    best = float("inf")
    for _ in range(max(1, repeats // 20)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def run_backend(disable: bool, repeats: int) -> dict:
    env = dict(os.environ)
    env["C3MPC_DISABLE_NUMBA"] = "1" if disable else "0"
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeats)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="timing repeats (best of repeats/20 passes)")
    args = parser.parse_args(argv)
    fast = run_backend(False, args.repeats)
    slow = run_backend(True, args.repeats)
    print(json.dumps(fast))
    print(json.dumps(slow))
    print(f"{'case':<14} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:<14} {fast[key]:>10.4f} {slow[key]:>10.4f} {slow[key] / fast[key]:>8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
