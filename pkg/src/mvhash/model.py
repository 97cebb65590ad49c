"""The trained multi-view hashing model: fit, encode, checkpoint round-trip."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mvhash import container
from mvhash.config import TrainConfig, substream_seed
from mvhash.errors import DataError
from mvhash.features import extract_views
from mvhash.fusion import Fusion, pool_slots
from mvhash.hashcore import binarize_batch, concat_views, train_stage1, train_stage2
from mvhash.ingest import noise_pixels
from mvhash.memory import MemoryModel
from mvhash.nn import MLP
from mvhash.viewrel import RelationMatrix, ViewClassifier, evaluate_scores

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MVHK"
CHECKPOINT_FORMAT = "mvhash-checkpoint/1"


@dataclass
class Standardizer:
    means: list[np.ndarray]
    scales: list[np.ndarray]

    @classmethod
    def fit(cls, views: Sequence[np.ndarray]) -> Standardizer:
        means = [v.mean(axis=0) for v in views]
        scales = [np.where(s > 1e-8, s, 1.0) for s in (v.std(axis=0) for v in views)]
        return cls(means, scales)

    def __call__(self, views: Sequence[np.ndarray]) -> list[np.ndarray]:
        if len(views) != len(self.means):
            raise DataError(f"expected {len(self.means)} views, got {len(views)}")
        return [(v - mu) / s for v, mu, s in zip(views, self.means, self.scales)]


class RelationEvaluator:
    """Stability evaluation on a fixed batch of training images with fresh noise per epoch."""

    def __init__(self, classifiers: Sequence[ViewClassifier], standardizer: Standardizer, pixels: np.ndarray,
                 sigma: float, seed: int, per_view_max: bool = True, denominator: str = "N"):
        self.classifiers = list(classifiers)
        self.standardizer = standardizer
        self.pixels = pixels
        self.sigma = sigma
        self.seed = seed
        self.per_view_max = per_view_max
        self.denominator = denominator

    def scores(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(substream_seed(self.seed, "noise", epoch))
        noisy = noise_pixels(self.pixels, self.sigma, rng)
        return evaluate_scores(self.classifiers, self.standardizer(extract_views(noisy)))

    def __call__(self, epoch: int) -> RelationMatrix:
        return RelationMatrix.from_scores(self.scores(epoch), self.per_view_max, self.denominator,
                                          substream_seed(self.seed, "noise", epoch))


@dataclass
class MVHashModel:
    config: TrainConfig
    standardizer: Standardizer
    classifiers: list[ViewClassifier]
    basic: MLP
    view_heads: list[MLP] = field(default_factory=list)
    projection: MLP | None = None
    fusion: Fusion | None = None
    memory: MemoryModel | None = None
    relation: RelationMatrix | None = None
    relation_used: np.ndarray | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.projection.out_dim if self.projection is not None else self.basic.out_dim

    @property
    def multiview(self) -> bool:
        return bool(self.view_heads)

    def relation_weights(self, x_all: np.ndarray, relation: str) -> np.ndarray:
        if relation == "memory":
            if not self.config.use_relation:
                return np.ones((len(x_all), len(self.view_heads)))
            return self.memory.predict(x_all)
        if relation != "exact":
            raise ValueError(f"relation must be 'exact' or 'memory', got {relation!r}")
        return self.relation_used

    def encode_features(self, views: Sequence[np.ndarray], ids: np.ndarray, relation: str = "exact") -> np.ndarray:
        """Relaxed codes in (-1, 1) for raw (unstandardized) view features."""
        std = self.standardizer(views)
        x_all = concat_views(std)
        basic = self.basic(x_all)
        if not self.multiview:
            return basic
        codes = [h(std[m]) for h, m in zip(self.view_heads, self.config.views)]
        E = self.relation_weights(x_all, relation)
        expanded, _ = self.fusion.forward(basic, codes, E, ids=np.asarray(ids))
        return self.projection(expanded)

    def encode(self, pixels: np.ndarray, ids: np.ndarray, relation: str = "exact",
               chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(packed binary codes, relaxed codes)`` for a batch of images."""
        out = []
        for start in range(0, len(pixels), chunk):
            views = extract_views(pixels[start:start + chunk])
            out.append(self.encode_features(views, ids[start:start + chunk], relation))
        relaxed = np.concatenate(out) if out else np.zeros((0, self.q))
        return binarize_batch(relaxed), relaxed

    # ---------------------------------------------------------------- checkpoint

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        for m, (mu, s) in enumerate(zip(self.standardizer.means, self.standardizer.scales)):
            arrays[f"std.mean.{m}"] = mu
            arrays[f"std.scale.{m}"] = s
        for m, clf in enumerate(self.classifiers):
            arrays.update(clf.net.state(f"clf.{m}"))
        arrays.update(self.basic.state("basic"))
        for j, h in enumerate(self.view_heads):
            arrays.update(h.state(f"head.{j}"))
        if self.projection is not None:
            arrays.update(self.projection.state("proj"))
            arrays["fusion.view_codes"] = self.fusion.view_codes
            arrays["relation.used"] = np.asarray(self.relation_used, dtype=np.float64)
        if self.memory is not None:
            arrays.update(self.memory.net.state("memory"))
        return arrays

    def meta(self) -> dict:
        cfg = dataclasses.asdict(self.config)
        cfg["fusion_vector"] = list(self.config.fusion_vector)
        cfg["views"] = list(self.config.views)
        return {
            "format": CHECKPOINT_FORMAT,
            "config": cfg,
            "q": self.q,
            "n_views": len(self.classifiers),
            "layout": self.fusion.describe() if self.fusion is not None else {"method": "basic-only"},
            "relation": self.relation.to_dict() if self.relation is not None else None,
            "history": self.history,
        }

    def save(self, path: str | Path) -> None:
        container.save(path, CHECKPOINT_MAGIC, self.meta(), self.to_arrays())

    @classmethod
    def load(cls, path: str | Path) -> MVHashModel:
        meta, arrays = container.load(path, CHECKPOINT_MAGIC)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: checkpoint format {meta.get('format')!r} != {CHECKPOINT_FORMAT!r}")
        cfg = TrainConfig(**meta["config"])
        M = meta["n_views"]
        std = Standardizer([arrays[f"std.mean.{m}"] for m in range(M)], [arrays[f"std.scale.{m}"] for m in range(M)])
        classifiers = [ViewClassifier(m, MLP.from_state(arrays, f"clf.{m}", "linear"), cfg.classifier_lr,
                                      cfg.epochs_stage1) for m in range(M)]
        model = cls(cfg, std, classifiers, MLP.from_state(arrays, "basic", "tanh"), history=meta["history"])
        if meta["relation"] is not None:
            model.relation = RelationMatrix.from_dict(meta["relation"])
        if "proj.0" in arrays:
            model.view_heads = [MLP.from_state(arrays, f"head.{j}", "tanh") for j in range(len(cfg.views))]
            model.projection = MLP.from_state(arrays, "proj", "tanh")
            lay = meta["layout"]
            model.fusion = Fusion(cfg.fusion, cfg.q_basic, cfg.q_view, len(cfg.views),
                                  lay.get("fusion_vector", cfg.fusion_vector), cfg.cfusion_budget,
                                  cfg.cfusion_repeats, cfg.pool_k, cfg.pool_w,
                                  seed=lay.get("seed", substream_seed(cfg.seed, "fusion")),
                                  view_codes=arrays["fusion.view_codes"])
            model.relation_used = arrays["relation.used"]
        if "memory.0" in arrays:
            model.memory = MemoryModel(MLP.from_state(arrays, "memory", "sigmoid"))
        return model


def eval_batch_ids(n_train: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(substream_seed(seed, "eval-batch"))
    return np.sort(rng.choice(n_train, size=min(size, n_train), replace=False))


def fit_model(pixels: np.ndarray, labels: np.ndarray, ids: np.ndarray, cfg: TrainConfig,
              views: Sequence[np.ndarray] | None = None, n_classes: int = 10) -> MVHashModel:
    """Run both training stages on the training images.

    ``views`` may carry precomputed raw features for ``pixels`` to skip
    extraction. With an empty ``cfg.views`` only stage 1 runs and the model
    encodes with the basic head alone.
    """
    if views is None:
        views = extract_views(pixels)
    standardizer = Standardizer.fit(views)
    std = standardizer(views)
    s1 = train_stage1(std, labels, cfg, n_classes)
    model = MVHashModel(cfg, standardizer, s1.classifiers, s1.basic, history=list(s1.history))
    evaluator = RelationEvaluator(s1.classifiers, standardizer,
                                  pixels[eval_batch_ids(len(pixels), cfg.eval_batch, cfg.seed)],
                                  cfg.noise_sigma, cfg.seed, cfg.per_view_max, cfg.denominator)
    if not cfg.views:
        if cfg.q_basic != cfg.q:
            raise DataError("a basic-only model needs q_basic == q")
        model.relation = evaluator(0)
        return model
    if cfg.fusion == "p":
        pool_slots(cfg.q_view, cfg.pool_k, cfg.pool_w)
    s2 = train_stage2(evaluator, std, labels, ids, s1.basic, cfg)
    model.view_heads = s2.view_heads
    model.projection = s2.projection
    model.fusion = s2.fusion
    model.memory = s2.memory
    model.relation = s2.relation
    model.relation_used = s2.relation_used
    model.history += s2.history
    return model
