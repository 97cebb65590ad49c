"""Per-view classifiers and the view-relation weights derived from their score stability."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mvhash.errors import DataError, NumericError
from mvhash.nn import MLP, MomentumSGD, softmax_xent

log = logging.getLogger(__name__)

DEFAULT_DIMS = (48, 34, 59, 324)


@dataclass
class ViewClassifier:
    view: int
    net: MLP
    lr: float
    epochs: int
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.net.out_dim

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self.net(x)


def classification_loss(scores: np.ndarray, target: int | np.ndarray) -> np.ndarray | float:
    """Softmax negative log-likelihood of the target class."""
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    loss, _ = softmax_xent(np.atleast_2d(scores), np.atleast_1d(target))
    return float(loss[0]) if single else loss


def train_classifier(
    view: int,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
    n_classes: int = 10,
    batch_size: int = 128,
    momentum: float = 0.9,
    expected_dim: int | None = None,
) -> ViewClassifier:
    """Fit one affine softmax classifier for view ``view`` by seeded mini-batch SGD."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if expected_dim is not None and features.shape[1] != expected_dim:
        raise DataError(f"view {view}: features have dim {features.shape[1]}, expected {expected_dim}")
    if len(features) != len(labels):
        raise DataError("features and labels differ in length")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError("label out of range")
    rng = np.random.default_rng(seed)
    net = MLP([features.shape[1], n_classes], "linear", rng)
    opt = MomentumSGD(net.params, lr, momentum)
    clf = ViewClassifier(view, net, lr, epochs)
    for _ in range(epochs):
        mean = classifier_epoch(clf, opt, features, labels, batch_size, rng)
        if not np.isfinite(mean):
            raise NumericError(f"view {view}: classifier loss became non-finite")
        clf.loss_history.append(float(mean))
    return clf


def classifier_epoch(clf: ViewClassifier, opt: MomentumSGD, x: np.ndarray, labels: np.ndarray, batch: int,
                     rng: np.random.Generator) -> float:
    """One shuffled pass of mini-batch SGD; returns the mean training loss."""
    order = rng.permutation(len(labels))
    total = 0.0
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        out, acts = clf.net.forward(x[idx], cache=True)
        loss, g = softmax_xent(out, labels[idx])
        grads, _ = clf.net.backward(acts, g / len(idx))
        opt.step(grads)
        total += loss.sum()
    return total / max(len(labels), 1)


def evaluate_scores(classifiers: Sequence[ViewClassifier], views: Sequence[np.ndarray]) -> np.ndarray:
    """Raw class scores ``Q[m, n, c]`` for each view's classifier."""
    if len(classifiers) != len(views):
        raise DataError(f"{len(classifiers)} classifiers for {len(views)} views")
    return np.stack([clf.scores(np.asarray(x, dtype=np.float64)) for clf, x in zip(classifiers, views)])


def stability(Q: np.ndarray, per_view_max: bool = True, denominator: str = "N") -> np.ndarray:
    """Raw per-view stability ``max_c std(Q_mc) - (1/N) sum_c std(Q_mc)``.

    ``std`` is the population standard deviation over the image axis.
    ``per_view_max=False`` sums the first term over views (every entry then
    shares it); ``denominator="C"`` divides the second term by the class
    count instead of the image count.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 3:
        raise DataError("Q must be M x N x C")
    M, N, C = Q.shape
    if N < 2:
        raise DataError("stability needs at least two images")
    std = Q.std(axis=1)  # M x C
    first = std.max(axis=1)
    if not per_view_max:
        first = np.full(M, first.sum())
    second = std.sum(axis=1) / (N if denominator == "N" else C)
    return first - second


def normalize(raw: np.ndarray) -> np.ndarray:
    """Log-map raw stability values into [0, 1]; the largest magnitude maps to 1."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite stability values")
    if not np.any(raw):
        log.warning("degenerate all-zero relation vector; using uniform weights")
        return np.ones_like(raw)
    shift = abs(raw.min())
    top = np.abs(raw).max()
    out = np.log1p(raw + shift) / np.log1p(top + shift)
    if out.min() < 0.0 or out.max() > 1.0:
        log.warning("normalized relation outside [0, 1]; clamping %s", out)
        out = np.clip(out, 0.0, 1.0)
    return out


def broadcast(normalized: np.ndarray, n: int) -> np.ndarray:
    normalized = np.asarray(normalized, dtype=np.float64)
    return np.tile(normalized, (n, 1)) if n else np.zeros((0, len(normalized)))


@dataclass
class RelationMatrix:
    raw: np.ndarray
    normalized: np.ndarray
    per_view_max: bool = True
    denominator: str = "N"
    seed: int = 0

    @classmethod
    def from_scores(cls, Q: np.ndarray, per_view_max: bool = True, denominator: str = "N",
                    seed: int = 0) -> RelationMatrix:
        raw = stability(Q, per_view_max, denominator)
        return cls(raw, normalize(raw), per_view_max, denominator, seed)

    def broadcast(self, n: int) -> np.ndarray:
        return broadcast(self.normalized, n)

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.tolist(),
            "normalized": self.normalized.tolist(),
            "per_view_max": self.per_view_max,
            "denominator": self.denominator,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RelationMatrix:
        return cls(np.asarray(d["raw"], float), np.asarray(d["normalized"], float),
                   d.get("per_view_max", True), d.get("denominator", "N"), d.get("seed", 0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> RelationMatrix:
        return cls.from_dict(json.loads(Path(path).read_text()))
