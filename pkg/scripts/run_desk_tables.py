"""Run every benchmark table for one config and print the Markdown renderings.

    python scripts/run_desk_tables.py --config configs/desk.json --out runs/desk --jobs 4
"""

import argparse
import sys

from opext.bench import TABLES, ExperimentConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--out")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--tables", nargs="+", default=["cond", "l1", "h1", "l2", "convergence"], choices=sorted(TABLES))
    args = ap.parse_args()
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.out:
        config.out = args.out
    config.jobs = args.jobs
    failed = 0
    for name in args.tables:
        res = TABLES[name](config)
        failed += len(res.failed)
        md = res.directory / "table.md"
        print(md.read_text() if md.exists() else f"{name}: {len(res.rows)} rows")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
