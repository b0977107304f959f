#!/usr/bin/env python3
"""BaySMM hyper-parameter grid search with k-fold CV on a synthetic training set.

The default is a reduced 2 x 2 x 2 grid; ``--full`` runs all 150 points
(hours on one core).
"""

import argparse
import logging
from pathlib import Path

from eldkit.baysmm import SmmTrainConfig
from eldkit.evaluation import GridSpec, grid_search, write_cv_report, write_cv_summary
from eldkit.pipeline import synthetic_split
from eldkit.synth import SynthConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--full", action="store_true")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--backend", default="glcu", choices=("glc", "glcu", "logreg"))
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--code-switch-rate", type=float, default=0.1)
    p.add_argument("--out", default="results/grid")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    split = synthetic_split(SynthConfig(code_switch_rate=args.code_switch_rate, seed=1))
    grid = GridSpec() if args.full else GridSpec(("l2", "l1"), (1e-4, 1e-3), (32, 64))
    results = grid_search(split.train, split.train_manifest, grid, args.folds, 42,
                          SmmTrainConfig(iters=args.iters, seed=42), args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cv_report.tsv", "w") as f:
        write_cv_report(results, f)
    with open(out / "cv_summary.tsv", "w") as f:
        write_cv_summary(results, f)
    for r in results[:5]:
        print(f"{r.reg_type}\t{r.reg_weight:g}\t{r.K}\t{r.mean_eer:.4f}")


if __name__ == "__main__":
    main()
