"""Train the desk GNP, then use it as the oracle of an extension run on the same cloud.

    python scripts/train_and_extend.py --out runs/gnp
"""

import argparse
import sys
from pathlib import Path

from opext.bench import ExperimentConfig, KernelGrid, run_extend, run_train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/gnp")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=150)
    args = ap.parse_args()
    config = ExperimentConfig(out=args.out, seed=args.seed, n_cloud=512)
    config.train.train = {"epochs": args.epochs}
    res = run_train(config)
    print(res.extra)
    ext = ExperimentConfig(
        out=args.out,
        seed=args.seed,
        n_cloud=512,
        oracle="gnp",
        checkpoint=str(Path(args.out) / "train" / "checkpoint.json"),
        kernels=[KernelGrid("matern", "3/2", [5.0])],
        centers=[128, 256],
        test_functions={"max_degrees": [3, 6], "per_degree": 5, "seed": 0},
    )
    rep = run_extend(ext)
    print(rep.extra)
    return 0 if rep.ok else 1


if __name__ == "__main__":
    sys.exit(main())
