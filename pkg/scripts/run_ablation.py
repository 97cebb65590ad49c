"""Train and score every ablation row (baseline, single views, E-weighted subsets, full model).

    python3 scripts/run_ablation.py --out ablation.csv
    python3 scripts/run_ablation.py --data /path/to/cifar-10-batches-bin --rows baseline full
"""

import argparse
import csv
import logging

from mvhash.config import TrainConfig
from mvhash.pipeline import Dataset, ablation_rows, run_row
from mvhash.synthetic import make_images


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", help="CIFAR-10 binary directory; synthetic images when omitted")
    p.add_argument("--per-class", type=int, default=1600)
    p.add_argument("--image-seed", type=int, default=1)
    p.add_argument("--split-seed", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fusion", default="r", choices=("r", "c", "p"))
    p.add_argument("--rows", nargs="*", help="subset of row names")
    p.add_argument("--out", default="ablation.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.data:
        ds = Dataset.from_dir(args.data, 5000, 1000, args.split_seed, 10000)
    else:
        pixels, labels = make_images(args.per_class, seed=args.image_seed)
        ds = Dataset.from_arrays(pixels, labels, 5000, 1000, args.split_seed, 10000)
    rows = ablation_rows(4)
    if args.rows:
        rows = [r for r in rows if r.name in set(args.rows)]
    base = TrainConfig(seed=args.seed, fusion=args.fusion)
    with open(args.out, "w", newline="") as fh:
        w = None
        for row in rows:
            result = run_row(ds, base, row)
            if w is None:
                w = csv.DictWriter(fh, fieldnames=list(result))
                w.writeheader()
            w.writerow(result)
            fh.flush()
    print(args.out)


if __name__ == "__main__":
    main()
