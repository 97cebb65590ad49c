"""Dataclass configs for training and full pipeline runs."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FUSION_METHODS = ("r", "c", "p")
RELATION_SOURCES = ("exact", "memory")


@dataclass
class TrainConfig:
    # pairwise loss
    a: float = 2.0
    alpha: float = 0.01
    # code lengths
    q: int = 64
    q_basic: int = 64
    q_view: int = 16
    # optimiser (hash heads, fusion projection)
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    pairs_per_epoch: int = 16384
    pos_fraction: float = 0.5
    epochs_stage1: int = 40
    epochs_stage2: int = 20
    hidden_layers: int = 0
    hidden_width: int = 256
    # per-view softmax classifiers
    classifier_lr: float = 0.01
    classifier_batch: int = 128
    # stability evaluation
    eval_batch: int = 256
    noise_sigma: float = 5.0
    per_view_max: bool = True
    denominator: str = "N"
    # fusion
    fusion: str = "r"
    fusion_vector: tuple[int, ...] = (1, 4, 8, 16)
    cfusion_budget: int = 512
    cfusion_repeats: float = 1.0
    pool_k: int = 4
    pool_w: int = 4
    # memory network
    memory_lr: float = 0.05
    memory_epochs: int = 2
    # ablation: which views take part and whether E weights them
    views: tuple[int, ...] = (0, 1, 2, 3)
    use_relation: bool = True
    seed: int = 0

    def __post_init__(self):
        self.fusion_vector = tuple(int(x) for x in self.fusion_vector)
        self.views = tuple(int(x) for x in self.views)
        if self.a <= 0 or self.alpha <= 0:
            raise ValueError("a and alpha must be positive")
        if min(self.q, self.q_basic, self.q_view) < 1:
            raise ValueError("code lengths must be >= 1")
        if self.fusion not in FUSION_METHODS:
            raise ValueError(f"fusion must be one of {FUSION_METHODS}, got {self.fusion!r}")
        if self.denominator not in ("N", "C"):
            raise ValueError("denominator must be 'N' or 'C'")
        if any(x < 1 for x in self.fusion_vector):
            raise ValueError("fusion vector entries must be >= 1")
        if len(set(self.views)) != len(self.views):
            raise ValueError("duplicate view index")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = ""
    n_train: int = 5000
    n_query: int = 1000
    n_gallery: int | None = 10000
    relation: str = "exact"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.relation not in RELATION_SOURCES:
            raise ValueError(f"relation must be one of {RELATION_SOURCES}")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["train"]["fusion_vector"] = list(self.train.fusion_vector)
        d["train"]["views"] = list(self.train.views)
        return d

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        d = dict(d)
        d["train"] = TrainConfig(**d.get("train", {}))
        return cls(**d)


def substream_seed(seed: int, name: str, *extra: int) -> int:
    """Derive a named child seed so each random consumer has its own stream."""
    key = zlib.crc32(name.encode())
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, key, *extra])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
