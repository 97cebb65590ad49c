"""Train baseline, +R, +C and +P over several seeds; report mAP with exact and memory-predicted relations.

    python3 scripts/run_fusion_compare.py --seeds 0 1 2 --out fusion_compare.csv
    python3 scripts/run_fusion_compare.py --data /path/to/cifar-10-batches-bin
"""

import argparse
import csv
import logging
import time

import numpy as np

from mvhash.config import TrainConfig
from mvhash.pipeline import Dataset, evaluate_model, train
from mvhash.synthetic import make_images

VARIANTS = {"baseline": dict(views=()), "R": dict(fusion="r"), "C": dict(fusion="c"), "P": dict(fusion="p")}


def load(args) -> Dataset:
    if args.data:
        return Dataset.from_dir(args.data, args.n_train, args.n_query, args.split_seed, args.n_gallery)
    pixels, labels = make_images(args.per_class, seed=args.image_seed)
    return Dataset.from_arrays(pixels, labels, args.n_train, args.n_query, args.split_seed, args.n_gallery)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", help="CIFAR-10 binary directory; synthetic images when omitted")
    p.add_argument("--per-class", type=int, default=1600)
    p.add_argument("--image-seed", type=int, default=1)
    p.add_argument("--split-seed", type=int, default=3)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-query", type=int, default=1000)
    p.add_argument("--n-gallery", type=int, default=10000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--out", default="fusion_compare.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    ds = load(args)
    rows = []
    for seed in args.seeds:
        for name in args.variants:
            t0 = time.perf_counter()
            model = train(ds, TrainConfig(seed=seed, **VARIANTS[name]))
            seconds = time.perf_counter() - t0
            exact, gallery, _ = evaluate_model(model, ds)
            row = {"seed": seed, "variant": name, "map": exact.map_full, "map_radius": exact.map_radius,
                   "distinct_codes": len(np.unique(gallery.words, axis=0)), "train_seconds": round(seconds, 1)}
            if model.multiview:
                row["map_memory"] = evaluate_model(model, ds, "memory")[0].map_full
            rows.append(row)
            print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)

    fields = ["seed", "variant", "map", "map_radius", "map_memory", "distinct_codes", "train_seconds"]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    for name in args.variants:
        maps = [r["map"] for r in rows if r["variant"] == name]
        print(f"{name:9s} mean mAP {np.mean(maps):.4f} +/- {np.std(maps):.4f} over {len(maps)} seeds")


if __name__ == "__main__":
    main()
