"""Write a synthetic dataset in the CIFAR-10 binary layout.

    python3 scripts/make_synthetic_cifar.py data/synthetic --per-class 1600 --seed 1
"""

import argparse

from mvhash.synthetic import write_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--per-class", type=int, default=1600)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--difficulty", type=float, default=1.0)
    args = p.parse_args()
    path = write_dataset(args.out, args.per_class, args.seed, args.difficulty)
    print(f"{path}: {10 * args.per_class} images")


if __name__ == "__main__":
    main()
