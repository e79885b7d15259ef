"""Expected SHD and AUROC against sample size (n = 10 vs n = 100).

    python scripts/metric_sweep.py --nodes 5 --seeds 10 --out metrics.csv
"""
import argparse
import csv
import dataclasses

import numpy as np

from dagvi.experiments import metric_point
from dagvi.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--samples", type=int, nargs="+", default=[10, 100])
    p.add_argument("--families", nargs="+", default=["autoregressive"],
                   choices=["autoregressive", "factorized"])
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--out", default="metrics.csv")
    args = p.parse_args()

    rows = []
    for fam in args.families:
        config = TrainConfig.desk(epochs=args.epochs, family=fam)
        for n in args.samples:
            for seed in range(args.seeds):
                r = metric_point(seed, args.nodes, n, config)
                rows.append(dataclasses.asdict(r))
                print(f"{fam:14s} n={n:4d} seed {seed:2d}  E[SHD] {r.expected_shd:.3f}  "
                      f"AUROC {r.auroc if r.auroc is None else round(r.auroc, 3)}", flush=True)
            shd = [r["expected_shd"] for r in rows if r["n"] == n and r["family"] == fam]
            auc = [r["auroc"] for r in rows if r["n"] == n and r["family"] == fam and r["auroc"] is not None]
            print(f"{fam} n={n}: median E[SHD] {np.median(shd):.3f}, median AUROC {np.median(auc):.3f}")

    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
