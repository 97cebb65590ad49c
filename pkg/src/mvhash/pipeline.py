"""End-to-end experiment helpers shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import dataclasses
import itertools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvhash.config import RunConfig, TrainConfig, substream_seed
from mvhash.features import extract_views
from mvhash.hashcore import binarize_batch
from mvhash.ingest import DatasetSplit, load_arrays, make_split
from mvhash.metrics import EvalReport, evaluate
from mvhash.model import MVHashModel, fit_model
from mvhash.retrieval import CodeSet

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Pixels and labels of a whole dataset plus a split and lazily cached raw features."""

    pixels: np.ndarray
    labels: np.ndarray
    split: DatasetSplit
    _views: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dir(cls, path: str | Path, n_train: int, n_query: int, seed: int,
                 n_gallery: int | None = None) -> Dataset:
        pixels, labels = load_arrays(path)
        return cls(pixels, labels, make_split(labels, n_train, n_query, substream_seed(seed, "split"), n_gallery))

    @classmethod
    def from_arrays(cls, pixels: np.ndarray, labels: np.ndarray, n_train: int, n_query: int, split_seed: int,
                    n_gallery: int | None = None) -> Dataset:
        """In-memory images; ``split_seed`` seeds the split directly."""
        return cls(pixels, labels, make_split(labels, n_train, n_query, split_seed, n_gallery))

    @classmethod
    def from_run_config(cls, rc: RunConfig) -> Dataset:
        return cls.from_dir(rc.data_dir, rc.n_train, rc.n_query, rc.train.seed, rc.n_gallery)

    def ids(self, part: str) -> np.ndarray:
        return getattr(self.split, part)

    def views(self, part: str) -> list[np.ndarray]:
        if part not in self._views:
            self._views[part] = extract_views(self.pixels[self.ids(part)])
        return self._views[part]


def train(ds: Dataset, cfg: TrainConfig) -> MVHashModel:
    ids = ds.ids("train")
    return fit_model(ds.pixels[ids], ds.labels[ids], ids, cfg, views=ds.views("train"))


def encode(model: MVHashModel, ds: Dataset, part: str, relation: str = "exact") -> CodeSet:
    ids = ds.ids(part)
    relaxed = model.encode_features(ds.views(part), ids, relation)
    meta = {"part": part, "relation": relation, "fusion": model.fusion.method if model.fusion else "basic-only"}
    return CodeSet(ids, binarize_batch(relaxed), relaxed, model.q, meta)


def evaluate_model(model: MVHashModel, ds: Dataset, relation: str = "exact", radius: int = 2,
                   depth: int | None = None) -> tuple[EvalReport, CodeSet, CodeSet]:
    gallery = encode(model, ds, "gallery", relation)
    queries = encode(model, ds, "query", relation)
    cfg = model.config
    echo = {"bits": model.q, "fusion": cfg.fusion if model.multiview else "basic-only", "relation": relation,
            "views": list(cfg.views), "use_relation": cfg.use_relation}
    return evaluate(gallery, queries, ds.labels, radius, depth, echo), gallery, queries


@dataclass
class AblationRow:
    name: str
    use_relation: bool
    views: tuple[int, ...]


def ablation_rows(n_views: int = 4) -> list[AblationRow]:
    """Baseline, each single view without E, every E-weighted subset of size 2..M-1, full model."""
    rows = [AblationRow("baseline", False, ())]
    rows += [AblationRow(f"view{m + 1}", False, (m,)) for m in range(n_views)]
    for size in range(2, n_views):
        for subset in itertools.combinations(range(n_views), size):
            rows.append(AblationRow("E+" + "+".join(f"view{m + 1}" for m in subset), True, subset))
    rows.append(AblationRow("full", True, tuple(range(n_views))))
    return rows


def row_config(base: TrainConfig, row: AblationRow) -> TrainConfig:
    return dataclasses.replace(base, views=row.views, use_relation=row.use_relation)


def run_row(ds: Dataset, base: TrainConfig, row: AblationRow, relation: str = "exact") -> dict:
    t0 = time.perf_counter()
    model = train(ds, row_config(base, row))
    seconds = time.perf_counter() - t0
    report, _, _ = evaluate_model(model, ds, relation)
    log.info("ablation %-28s mAP=%.4f radius-mAP=%.4f (%.1fs)", row.name, report.map_full, report.map_radius, seconds)
    return {"row": row.name, "E": int(row.use_relation),
            **{f"view{m + 1}": int(m in row.views) for m in range(4)},
            "map": report.map_full, "map_radius": report.map_radius, "train_seconds": round(seconds, 3)}
