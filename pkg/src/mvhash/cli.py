"""Command-line entry point: train, encode, index, query, eval, ablate."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from mvhash.config import FUSION_METHODS, RELATION_SOURCES, RunConfig
from mvhash.errors import DataError, NumericError
from mvhash.ingest import DatasetSplit, load_arrays
from mvhash.metrics import evaluate, load_labels, save_labels
from mvhash.model import MVHashModel
from mvhash.pipeline import Dataset, ablation_rows, encode, run_row, train
from mvhash.retrieval import CodeSet, HammingIndex

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_NAME = "model.mvhk"
ARTIFACTS = (CHECKPOINT_NAME, "relation.json", "losses.csv", "config.json", "split.json", "labels.json")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> RunConfig attribute
_RUN_FLAGS = {"data": "data_dir", "out": "out_dir", "n_train": "n_train", "n_query": "n_query",
              "n_gallery": "n_gallery", "relation": "relation"}
_INT_TRAIN_FLAGS = ("q", "q_basic", "q_view", "epochs_stage1", "epochs_stage2", "pairs_per_epoch", "batch_size",
                    "hidden_layers")
_TRAIN_FLAGS = ("fusion", "seed", "lr") + _INT_TRAIN_FLAGS


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; explicit flags override it")
    p.add_argument("--data", help="directory holding CIFAR-10 binary batches")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-query", type=int)
    p.add_argument("--n-gallery", type=int)
    p.add_argument("--relation", choices=RELATION_SOURCES)
    p.add_argument("--fusion", choices=FUSION_METHODS)
    p.add_argument("--seed", type=int)
    for name in _INT_TRAIN_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), type=int)
    p.add_argument("--lr", type=float)


def run_config(args: argparse.Namespace) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    run_updates = {attr: getattr(args, flag) for flag, attr in _RUN_FLAGS.items()
                   if getattr(args, flag, None) is not None}
    train_updates = {k: getattr(args, k) for k in _TRAIN_FLAGS if getattr(args, k, None) is not None}
    rc = dataclasses.replace(rc, train=dataclasses.replace(rc.train, **train_updates), **run_updates)
    if not rc.data_dir:
        raise DataError("no dataset directory given (--data or config data_dir)")
    return rc


def _write_losses(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "Lp", "Lc", "L", "Lw"])
        for row in history:
            w.writerow([row["epoch"]] + ["" if row[k] is None else repr(row[k]) for k in ("Lp", "Lc", "L", "Lw")])


def cmd_train(args) -> int:
    rc = run_config(args)
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = Dataset.from_run_config(rc)
    rc.dump(out / "config.json")
    ds.split.save(out / "split.json")
    ids = np.unique(np.concatenate([ds.split.train, ds.split.query, ds.split.gallery]))
    save_labels(out / "labels.json", ids, ds.labels[ids])
    model = train(ds, rc.train)
    model.save(out / CHECKPOINT_NAME)
    model.relation.save(out / "relation.json")
    _write_losses(out / "losses.csv", model.history)
    print(out / CHECKPOINT_NAME)
    return EXIT_OK


def cmd_encode(args) -> int:
    model = MVHashModel.load(args.checkpoint)
    pixels, labels = load_arrays(args.data)
    split = DatasetSplit.load(args.split)
    ds = Dataset(pixels, labels, split)
    codes = encode(model, ds, args.part, args.relation)
    codes.save(args.out)
    print(f"{args.out}: {len(codes)} codes, q={codes.q}")
    return EXIT_OK


def cmd_index(args) -> int:
    index = HammingIndex(CodeSet.load(args.codes))
    index.save(args.out)
    print(f"{args.out}: {len(index)} items in {len(index.table)} buckets")
    return EXIT_OK


def cmd_query(args) -> int:
    index = HammingIndex.load(args.index)
    queries = CodeSet.load(args.codes)
    if queries.q != index.q:
        raise DataError(f"code length mismatch: index q={index.q}, queries q={queries.q}")
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["query_id", "rank", "id", "hamming", "distance"])
        for row in range(len(queries)):
            res = index.query(queries.words[row], queries.continuous[row], args.radius, int(queries.ids[row]))
            for rank, (i, h, d) in enumerate(res.items()[: args.limit]):
                w.writerow([res.query_id, rank, i, h, repr(d)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    gallery = CodeSet.load(args.gallery)
    queries = CodeSet.load(args.queries)
    labels = load_labels(args.labels)
    echo = {"gallery": str(args.gallery), "queries": str(args.queries), "gallery_meta": gallery.meta,
            "query_meta": queries.meta}
    report = evaluate(gallery, queries, labels, args.radius, args.depth, echo)
    written = report.save(args.out)
    print(f"mAP={report.map_full:.4f} radius{args.radius}-mAP={report.map_radius:.4f} -> {written[0]}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = run_config(args)
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rc.dump(out / "config.json")
    ds = Dataset.from_run_config(rc)
    rows = ablation_rows(4)
    if args.rows:
        wanted = set(args.rows.split(","))
        rows = [r for r in rows if r.name in wanted]
        if not rows:
            raise DataError(f"no ablation rows match {args.rows!r}")
    path = out / "ablation.csv"
    with open(path, "w", newline="") as fh:
        w = None
        for row in rows:
            result = run_row(ds, rc.train, row, rc.relation)
            if w is None:
                w = csv.DictWriter(fh, fieldnames=list(result))
                w.writeheader()
            w.writerow(result)
            fh.flush()
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvhash", description="Multi-view hashing for image retrieval.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run both training stages and write a checkpoint")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode one part of a split into a code file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, help="split.json written by train")
    p.add_argument("--part", choices=("train", "query", "gallery"), required=True)
    p.add_argument("--relation", choices=RELATION_SOURCES, default="exact")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", help="build a Hamming index from a code file")
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="radius search of every query code, results as CSV")
    p.add_argument("--index", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="mAP, precision within radius and ROC for query vs gallery codes")
    p.add_argument("--gallery", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--labels", required=True, help="labels.json written by train")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--depth", type=int, default=None, help="truncate full-ranking AP at this depth")
    p.add_argument("--out", required=True, help="report path stem")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score every ablation row")
    _add_run_options(p)
    p.add_argument("--rows", help="comma-separated subset of row names")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("MVHASH_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except NumericError as e:
        print(f"mvhash: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as e:
        print(f"mvhash: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"mvhash: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
