"""Command-line interface for running and aggregating experiments.

Exit codes: 0 success, 1 configuration error, 2 runtime abort,
3 partial results (some trials aborted, outputs still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmfbo",
        description="Non-myopic multifidelity Bayesian optimization harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a paired-arm experiment from a config file")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--trials", type=int, default=None, help="override trial count")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.add_argument("--arm", choices=["baseline", "non_myopic", "both"],
                       default=None, help="restrict to one algorithm arm")
    p_run.add_argument("--seed", type=int, default=None, help="override base seed")
    p_run.add_argument("--n-mc", type=int, default=None,
                       help="override Monte Carlo draw count of the lookahead arm")
    p_run.add_argument("--workers", type=int, default=1,
                       help="parallel trial worker processes")

    sub.add_parser("list-problems", help="list registered benchmark problems")

    p_agg = sub.add_parser("aggregate", help="recompute aggregate outputs from trial CSVs")
    p_agg.add_argument("--in", dest="in_dir", required=True, help="results directory")

    return parser


def _cmd_run(args) -> int:
    from . import harness
    from .benchmarks import UnknownProblemError, get_problem

    try:
        cfg = harness.load_config(args.config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
        if cfg.seeds is not None:
            overrides["seeds"] = None
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["base_seed"] = args.seed
        overrides["seeds"] = None
    if args.n_mc is not None:
        overrides["n_mc"] = args.n_mc
    if args.arm is not None and args.arm != "both":
        overrides["arms"] = (args.arm,)
    try:
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        if cfg.problem_file is not None:
            from .benchmarks import registry
            registry().load_file(cfg.problem_file, replace=True)
        get_problem(cfg.problem)
    except (UnknownProblemError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = harness.run_experiment(cfg, workers=args.workers)
        written = harness.emit_outputs(result, cfg.out_dir)
    except Exception as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for path in written:
        print(path)
    if result.partial:
        print("warning: some trials aborted; aggregate marked partial", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_list_problems() -> int:
    from .benchmarks import registry

    reg = registry()
    for name in reg.names():
        p = reg.get(name)
        costs = ", ".join(f"{c:g}" for c in p.costs)
        print(f"{name}: d={p.dimension}, levels={p.n_levels}, costs=({costs})")
    return EXIT_OK


def _cmd_aggregate(in_dir) -> int:
    from . import harness

    try:
        result = harness.aggregate_directory(in_dir)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"aggregated {len(result.trials)} trials in {in_dir}")
    return EXIT_PARTIAL if result.partial else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "list-problems":
        return _cmd_list_problems()
    if args.command == "aggregate":
        return _cmd_aggregate(args.in_dir)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
