"""Command line entry point: ``c3mpc <subcommand> [options]``.

Subcommands
    simulate    open-loop LCS rollout
    control     closed-loop C3 trials
    baseline    closed-loop trials with the full-horizon MIQP controller
    bench-proj  projection timing on closed-loop targets
    compare     cost-to-go series (C3, MIQP baseline, realized)

Errors exit with a nonzero code and print one JSON object
``{"error": <category>, "message": ...}`` on stderr.  Categories: ``config``
(exit 2), ``io`` (3), ``solver`` (4), ``internal`` (1).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .controller import PROJECTION_METHODS
from .harness import (
    SOLVER_ERRORS,
    ConfigError,
    ExperimentConfig,
    PRESETS,
    bench_projection,
    compare_cost_to_go,
    describe,
    run_experiment,
    run_open_loop,
)

EXIT_CODES = {"internal": 1, "config": 2, "io": 3, "solver": 4}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c3mpc", description="Consensus complementarity control experiments")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML or JSON experiment file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="number of trials")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--projection", choices=PROJECTION_METHODS, help="override the projection method")
    sub.add_parser("simulate", parents=[common], help="open-loop LCS rollout")
    sub.add_parser("control", parents=[common], help="closed-loop C3 trials")
    sub.add_parser("baseline", parents=[common], help="closed-loop full MIQP trials")
    bench = sub.add_parser("bench-proj", parents=[common], help="projection timing benchmark")
    bench.add_argument("--calls", type=int, default=1000, help="projection calls per method")
    cmp_ = sub.add_parser("compare", parents=[common], help="cost-to-go series")
    cmp_.add_argument("--budget", type=int, default=None, help="baseline node budget")
    return p


def _config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig.preset(args.preset or "cartpole-sim")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.projection is not None:
        changes["controller"] = {"projection": args.projection}
    return cfg.replace(**changes) if changes else cfg


def _run(args) -> dict:
    cfg = _config(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "simulate":
        traj = run_open_loop(cfg, out)
        return {"steps": traj.T, "final_state": traj.states[-1].tolist(), "csv": str(out / "rollout.csv")}
    if args.command in ("control", "baseline"):
        table = run_experiment(cfg, out, baseline=args.command == "baseline")
        return {
            "trials": len(table.rows),
            "stabilized": table.successes,
            "errors": sum(bool(r.error) for r in table.rows),
            "summary": str(out / "summary.csv"),
        }
    if args.command == "bench-proj":
        rows = bench_projection(cfg, calls=args.calls, out_path=out / "projection_timing.csv")
        return {"benchmark": json.loads(describe(rows))}
    if args.command == "compare":
        samples = compare_cost_to_go(cfg, out / "cost_to_go.csv", baseline_budget=args.budget)
        return {"samples": len(samples), "csv": str(out / "cost_to_go.csv")}
    raise ConfigError(f"unknown command {args.command}")


def _fail(category: str, exc: BaseException) -> int:
    print(json.dumps({"error": category, "message": " ".join(str(exc).split())}), file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        report = _run(args)
    except ConfigError as exc:
        return _fail("config", exc)
    except OSError as exc:
        return _fail("io", exc)
    except SOLVER_ERRORS as exc:
        return _fail("solver", exc)
    except Exception as exc:  # noqa: BLE001  -- any other failure still gets a category
        return _fail("internal", exc)
    print(json.dumps(report, allow_nan=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
