"""Command line entry point.

Subcommands map onto the pipeline phases; each run writes its artifacts
(JSONL/CSV reports plus rendered PNG figures) into a fresh directory under
the configured runs root, or into --run-dir when given.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, make_clock
from .phases import (
    run_cluster,
    run_discover,
    run_eval,
    run_eval_aggregate,
    run_learn,
    run_metrics,
    run_snapshot,
)
from .store import new_run_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archskills",
        description="Archetype-clustered skill learning for optimization problems",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--run-dir", default=None, help="write artifacts here instead of runs/<stamp>")

    p_discover = sub.add_parser("discover", help="represent, cluster, and distill seed skills")
    common(p_discover)

    p_learn = sub.add_parser("learn", help="online skill learning over the training stream")
    common(p_learn)

    p_eval = sub.add_parser("eval", help="skill-guided inference and Pass@1 report")
    common(p_eval)
    p_eval.add_argument(
        "--results",
        default=None,
        help="aggregate precomputed result records (JSONL) instead of running inference",
    )

    p_cluster = sub.add_parser("cluster", help="cluster an embeddings file")
    common(p_cluster)
    p_cluster.add_argument("--embeddings", required=True, help="JSONL embedding records")
    p_cluster.add_argument(
        "--sweep",
        default=None,
        help="comma-separated epsilon values to sweep (e.g. 0.01,0.05,0.1)",
    )

    p_metrics = sub.add_parser("metrics", help="retrieval metrics over labeled embeddings")
    common(p_metrics)
    p_metrics.add_argument("--embeddings", required=True, help="JSONL embedding records with labels")
    p_metrics.add_argument("--ks", default="1,3,5", help="comma-separated cutoffs")

    p_snapshot = sub.add_parser("snapshot", help="snapshot the persisted skill library")
    p_snapshot.add_argument("--config", required=True, help="YAML run configuration")

    return parser


def _resolve_run_dir(args, config) -> str:
    if getattr(args, "run_dir", None):
        import os

        os.makedirs(args.run_dir, exist_ok=True)
        return args.run_dir
    return new_run_dir(config.runs_dir, clock=make_clock(config), name=config.run_name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.command == "discover":
            result = run_discover(config, _resolve_run_dir(args, config))
        elif args.command == "learn":
            result = run_learn(config, _resolve_run_dir(args, config))
        elif args.command == "eval":
            run_dir = _resolve_run_dir(args, config)
            if args.results:
                result = run_eval_aggregate(args.results, run_dir)
            else:
                result = run_eval(config, run_dir)
        elif args.command == "cluster":
            sweep = None
            if args.sweep:
                sweep = [float(x) for x in args.sweep.split(",") if x.strip()]
            result = run_cluster(config, args.embeddings, _resolve_run_dir(args, config), sweep)
        elif args.command == "metrics":
            ks = [int(x) for x in args.ks.split(",") if x.strip()]
            result = run_metrics(config, args.embeddings, _resolve_run_dir(args, config), ks)
        elif args.command == "snapshot":
            result = run_snapshot(config)
        else:  # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"[{result.phase}] run dir: {result.run_dir}")
    for key, value in result.summary.items():
        print(f"  {key}: {value}")
    for output in result.outputs:
        print(f"  wrote {output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
