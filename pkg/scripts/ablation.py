"""Train every refiner variant on the pinned synthetic fixture and tabulate Rank n@m.

    python scripts/ablation.py --out ablation.tsv [--epochs 30] [--variants full,no-lang]
"""

import argparse
import csv

from vlrefine import fixture
from vlrefine.train import rank_table_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default=",".join(fixture.VARIANTS))
    ap.add_argument("--epochs", type=int, default=fixture.TRAIN.epochs)
    ap.add_argument("--out", default="ablation.tsv")
    ap.add_argument("--every", type=int, default=5, help="print test Rank1@0.5 every N epochs")
    args = ap.parse_args()

    def log(variant, entry):
        if entry["epoch"] % args.every == 0:
            loss = "-" if entry["loss"] is None else f"{entry['loss']:.4f}"
            print(f"{variant:13s} epoch {entry['epoch']:3d}  loss {loss}  R1@0.5 {entry['test'][(1, 0.5)]:.3f}", flush=True)

    runs = fixture.run_variants(args.variants.split(","), log=log, epochs=args.epochs)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "rank_n", "iou_m", "value", "seconds"])
        for variant, run in runs.items():
            for n, m, v in rank_table_rows(run["result"].final):
                w.writerow([variant, n, m, repr(v), f"{run['seconds']:.1f}"])
    for variant, run in runs.items():
        print(f"{variant:13s} Rank1@0.5 {run['r1']:.4f}  ({run['seconds']:.0f} s)")


if __name__ == "__main__":
    main()
