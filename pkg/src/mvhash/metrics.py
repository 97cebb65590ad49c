"""Retrieval evaluation: average precision, mAP, precision within a Hamming radius, ROC."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from mvhash.errors import DataError
from mvhash.retrieval import CodeSet, HammingIndex, full_ranking

log = logging.getLogger(__name__)


def average_precision(relevance: Sequence[bool] | np.ndarray) -> float:
    """Mean of precision@k over the ranks k that hold a relevant item (0 if none)."""
    rel = np.asarray(relevance, dtype=bool)
    if rel.size == 0:
        log.debug("average_precision: empty ranking, AP defined as 0")
        return 0.0
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def mean_ap(aps: Sequence[float]) -> float:
    aps = np.asarray(aps, dtype=np.float64)
    if aps.size == 0:
        raise DataError("mean_ap needs at least one query")
    return float(np.mean(aps))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_from_counts(thresholds: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> RocCurve | None:
    """ROC from per-threshold positive/negative counts, thresholds in descending score order."""
    P, N = pos.sum(), neg.sum()
    if P == 0 or N == 0:
        log.warning("ROC undefined: relevance has a single class")
        return None
    tpr = np.concatenate([[0.0], np.cumsum(pos) / P])
    fpr = np.concatenate([[0.0], np.cumsum(neg) / N])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, np.concatenate([[np.inf], thresholds]), auc)


def roc_curve(scores: np.ndarray, relevances: np.ndarray) -> RocCurve | None:
    """Threshold sweep over distinct scores (higher score = predicted relevant)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    rel = np.asarray(relevances, dtype=bool).ravel()
    uniq, inv = np.unique(-scores, return_inverse=True)
    pos = np.bincount(inv, weights=rel, minlength=len(uniq))
    neg = np.bincount(inv, weights=~rel, minlength=len(uniq))
    return roc_from_counts(-uniq, pos, neg)


@dataclass
class EvalReport:
    map_full: float
    map_radius: float
    radius: int
    depth: int | None
    precision_at_radius: list[float]
    empty_fraction_at_radius: list[float]
    auc: float | None
    roc_fpr: list[float] = field(default_factory=list)
    roc_tpr: list[float] = field(default_factory=list)
    n_queries: int = 0
    n_gallery: int = 0
    config: dict = field(default_factory=dict)

    @property
    def mAP(self) -> float:
        return self.map_full

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, stem: str | Path) -> list[Path]:
        """Write ``<stem>.json``, ``<stem>.csv`` (summary and precision curve) and ``<stem>_roc.csv``."""
        stem = Path(stem)
        j, c, r = stem.with_suffix(".json"), stem.with_suffix(".csv"), stem.with_name(stem.stem + "_roc.csv")
        j.write_text(self.to_json())
        with open(c, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["map_full", repr(self.map_full)])
            w.writerow(["map_radius", repr(self.map_radius)])
            w.writerow(["auc", "" if self.auc is None else repr(self.auc)])
            for k, p in enumerate(self.precision_at_radius):
                w.writerow([f"precision@r{k}", repr(p)])
        with open(r, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for f, t in zip(self.roc_fpr, self.roc_tpr):
                w.writerow([repr(f), repr(t)])
        return [j, c, r]


def evaluate(gallery: CodeSet, queries: CodeSet, labels: Mapping[int, int] | np.ndarray, radius: int = 2,
             depth: int | None = None, config: dict | None = None) -> EvalReport:
    """Score a query set against a gallery in both retrieval modes.

    Full-ranking mode orders the whole gallery by Hamming distance, then
    continuous distance, then id, and computes AP over the top ``depth``
    (whole gallery by default). Radius mode keeps only the multi-probe
    candidates within ``radius`` and ranks them by continuous distance; a
    query with no candidates scores AP 0.
    """
    if gallery.q != queries.q:
        raise DataError(f"code length mismatch: gallery q={gallery.q}, queries q={queries.q}")
    if len(queries) == 0:
        raise DataError("no queries")
    lab = _label_lookup(labels)
    g_lab = lab(gallery.ids)
    q_lab = lab(queries.ids)
    index = HammingIndex(gallery)
    q = gallery.q
    max_r = min(q, max(radius, 2))
    pos_counts = np.zeros(q + 1)
    neg_counts = np.zeros(q + 1)
    prec = np.zeros((len(queries), max_r + 1))
    empty = np.zeros((len(queries), max_r + 1), dtype=bool)
    ap_full = np.zeros(len(queries))
    ap_radius = np.zeros(len(queries))

    for i in range(len(queries)):
        words, cont = queries.words[i], queries.continuous[i]
        order, ham = full_ranking(gallery, words, cont)
        rel = g_lab == q_lab[i]
        ranked = rel[order] if depth is None else rel[order[:depth]]
        ap_full[i] = average_precision(ranked)

        pos_counts += np.bincount(ham[rel], minlength=q + 1)
        neg_counts += np.bincount(ham[~rel], minlength=q + 1)
        for r in range(max_r + 1):
            inside = ham <= r
            n_in = inside.sum()
            empty[i, r] = n_in == 0
            prec[i, r] = rel[inside].sum() / n_in if n_in else 0.0

        res = index.query(words, cont, radius)
        ap_radius[i] = average_precision(lab(res.ids) == q_lab[i])

    roc = roc_from_counts(-np.arange(q + 1, dtype=np.float64), pos_counts, neg_counts)
    return EvalReport(
        map_full=mean_ap(ap_full),
        map_radius=mean_ap(ap_radius),
        radius=radius,
        depth=depth,
        precision_at_radius=prec.mean(axis=0).tolist(),
        empty_fraction_at_radius=empty.mean(axis=0).tolist(),
        auc=None if roc is None else roc.auc,
        roc_fpr=[] if roc is None else roc.fpr.tolist(),
        roc_tpr=[] if roc is None else roc.tpr.tolist(),
        n_queries=len(queries),
        n_gallery=len(gallery),
        config=dict(config or {}),
    )


def _label_lookup(labels: Mapping[int, int] | np.ndarray):
    if isinstance(labels, Mapping):
        def lookup(ids):
            try:
                return np.array([labels[int(i)] for i in ids], dtype=np.int64)
            except KeyError as e:
                raise DataError(f"no label for id {e.args[0]}") from None
        return lookup
    arr = np.asarray(labels)

    def lookup(ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and ids.max() >= len(arr):
            raise DataError(f"no label for id {ids.max()}")
        return arr[ids]
    return lookup


def save_labels(path: str | Path, ids: np.ndarray, labels: np.ndarray) -> None:
    doc = {"ids": np.asarray(ids).tolist(), "labels": np.asarray(labels).tolist()}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_labels(path: str | Path) -> dict[int, int]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: label file not found")
    doc = json.loads(p.read_text())
    return dict(zip(doc["ids"], doc["labels"]))
