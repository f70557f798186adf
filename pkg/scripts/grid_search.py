"""Grid search over forest size and depth on the desk benchmark.

    python scripts/grid_search.py --out results/grid.csv
"""

import argparse
import csv
import os

from pefrf.dataset import split_groups
from pefrf.forest import grid_search

from desk_benchmark import build


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/grid.csv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trees", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--depths", type=int, nargs="+", default=[5, 10, 20])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    _, data = build(64, args.seed)
    folds = split_groups(data.groups, 5, args.seed)
    best, cells = grid_search(data, tuple(args.trees), tuple(args.depths), seed=args.seed,
                              folds=folds, workers=args.workers)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("n_trees", "max_depth", "mean_srcc"))
        for c in cells:
            w.writerow((c.n_trees, c.max_depth, c.mean_srcc))
    score = {(c.n_trees, c.max_depth): c.mean_srcc for c in cells}[best.n_trees, best.max_depth]
    print(f"best: {best.n_trees} trees, depth {best.max_depth}, mean SRCC {score:.4f}")


if __name__ == "__main__":
    main()
