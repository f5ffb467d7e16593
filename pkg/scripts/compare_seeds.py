"""Flat vs hierarchical vs fine-tuned heads over several seeds.

    python3 scripts/compare_seeds.py --config synthetic --seeds 0 1 2 3 4 --out runs/compare
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from foodhier.config import load_config
from foodhier.pipeline import VARIANTS, compare_flat_vs_hierarchical


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="synthetic")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    out = Path(args.out)
    table = []
    for seed in args.seeds:
        cfg = load_config(args.config, seed=seed, out=out / f"seed{seed}")
        for row in compare_flat_vs_hierarchical(cfg):
            table.append({"seed": seed, **row})

    out.mkdir(parents=True, exist_ok=True)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["seed", "variant", "top1", "cluster_top1"], lineterminator="\n")
        w.writeheader()
        w.writerows(table)

    print(f"{'variant':<8}{'top1':>16}{'cluster_top1':>18}")
    for v in VARIANTS:
        t = np.array([r["top1"] for r in table if r["variant"] == v])
        c = np.array([r["cluster_top1"] for r in table if r["variant"] == v])
        print(f"{v:<8}{t.mean():>9.4f} ± {t.std():.4f}{c.mean():>11.4f} ± {c.std():.4f}")
    print(f"per-seed rows in {out / 'summary.csv'}")


if __name__ == "__main__":
    main()
