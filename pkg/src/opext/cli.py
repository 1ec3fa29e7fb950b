"""``opext`` command line: geometry, fits, solves, training, extension and benchmark tables."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench

VERBS = ("geom", "fit", "solve", "train", "extend", "bench")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults to the desk grid)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config value, 'runs')")
    common.add_argument("--jobs", type=int, help="worker processes for grid cells")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="opext", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("geom", parents=[common], help="sample the cloud and report center fill distances")
    sub.add_parser("fit", parents=[common], help="kernel interpolation of the test functions")
    sub.add_parser("solve", parents=[common], help="meshfree Laplace-Beltrami solves of the test functions")
    sub.add_parser("train", parents=[common], help="train the desk GNP on kernel responses")
    sub.add_parser("extend", parents=[common], help="extension bound reports over the grid")
    b = sub.add_parser("bench", parents=[common], help="render one benchmark table")
    b.add_argument("table", choices=sorted(bench.TABLES))
    return parser


def load_config(args) -> bench.ExperimentConfig:
    config = bench.ExperimentConfig.load(args.config) if args.config else bench.ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = args.out
    if args.jobs is not None:
        config.jobs = max(1, args.jobs)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"opext: bad config: {exc}", file=sys.stderr)
        return 2

    if args.verb == "geom":
        print(json.dumps(bench.geometry_summary(config), indent=2))
        return 0
    runner = {
        "fit": bench.run_fit,
        "solve": bench.run_solve,
        "train": bench.run_train,
        "extend": bench.run_extend,
    }.get(args.verb) or bench.TABLES[args.table]
    result = runner(config)
    print(f"{result.name}: {len(result.rows)} rows, {len(result.failed)} failed cells -> {result.directory}")
    table = result.directory / "table.md"
    if table.exists():
        print(table.read_text())
    for f in result.failed:
        print(f"FAILED {f['kernel']} sigma={f['sigma']} N={f['N']}: {f['error']}", file=sys.stderr)
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
