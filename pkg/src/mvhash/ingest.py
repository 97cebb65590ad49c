"""CIFAR-10 binary batches, stratified splits, pair sampling and noise."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from mvhash.errors import DataError

log = logging.getLogger(__name__)

NUM_CLASSES = 10
IMAGE_SHAPE = (32, 32, 3)
PIXELS = 3072
RECORD_BYTES = PIXELS + 1

_BATCH_RE = re.compile(r"^(data_batch_(\d+)|test_batch)\.bin$")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    pixels: np.ndarray  # 32x32x3 uint8, HWC
    label: int
    id: int

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.size != PIXELS:
            raise DataError(f"record {self.id}: pixel buffer must be {PIXELS} uint8 values")
        if not 0 <= self.label < NUM_CLASSES:
            raise DataError(f"record {self.id}: label {self.label} out of range")


@dataclass(frozen=True)
class PairSample:
    first: int
    second: int
    y: int


@dataclass
class Pairs:
    """Column-wise pair storage; iterating yields PairSample."""

    first: np.ndarray
    second: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[PairSample]:
        for a, b, y in zip(self.first.tolist(), self.second.tolist(), self.y.tolist()):
            yield PairSample(a, b, y)

    def __getitem__(self, idx) -> Pairs:
        return Pairs(self.first[idx], self.second[idx], self.y[idx])


@dataclass
class DatasetSplit:
    train: np.ndarray
    query: np.ndarray
    gallery: np.ndarray
    seed: int
    gallery_includes_train: bool = False
    labels: np.ndarray = field(default=None, repr=False)  # label per record id

    def to_json(self) -> str:
        doc = {
            "seed": int(self.seed),
            "gallery_includes_train": self.gallery_includes_train,
            "train": self.train.tolist(),
            "query": self.query.tolist(),
            "gallery": self.gallery.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path, labels: np.ndarray | None = None) -> DatasetSplit:
        doc = json.loads(Path(path).read_text())
        return cls(
            train=np.asarray(doc["train"], dtype=np.int64),
            query=np.asarray(doc["query"], dtype=np.int64),
            gallery=np.asarray(doc["gallery"], dtype=np.int64),
            seed=doc["seed"],
            gallery_includes_train=doc.get("gallery_includes_train", False),
            labels=labels,
        )


def _batch_files(directory: Path) -> list[Path]:
    found = []
    for p in directory.iterdir():
        m = _BATCH_RE.match(p.name)
        if m:
            # data batches in numeric order, test batch last
            key = (0, int(m.group(2))) if m.group(2) else (1, 0)
            found.append((key, p))
    return [p for _, p in sorted(found)]


def read_batch_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Decode one binary batch into (N x 32 x 32 x 3 uint8, N labels)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        raise DataError(f"{path}: truncated record ({raw.size} bytes is not a multiple of {RECORD_BYTES})")
    raw = raw.reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES:
        bad = int(np.argmax(labels >= NUM_CLASSES))
        raise DataError(f"{path}: record {bad} has label byte {labels[bad]} >= {NUM_CLASSES}")
    # planes R, G, B, each 32x32 row-major -> HWC
    pixels = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(pixels), labels


def load_arrays(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    directory = Path(path)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = _batch_files(directory)
    if not files:
        raise DataError(f"{directory}: no batch files found")
    parts = [read_batch_file(f) for f in files]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([lab for _, lab in parts])
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    log.info("loaded %d records from %d files; per-class counts %s", len(labels), len(files), counts.tolist())
    return pixels, labels


def load_cifar10(path: str | Path) -> list[ImageRecord]:
    """Load every record in a CIFAR-10 binary directory; ids follow file order."""
    pixels, labels = load_arrays(path)
    return [ImageRecord(pixels[i], int(labels[i]), i) for i in range(len(labels))]


def records_to_arrays(records: Sequence[ImageRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not records:
        return np.zeros((0, *IMAGE_SHAPE), np.uint8), np.zeros(0, np.int64), np.zeros(0, np.int64)
    pixels = np.stack([r.pixels.reshape(IMAGE_SHAPE) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    ids = np.array([r.id for r in records], dtype=np.int64)
    return pixels, labels, ids


def encode_records(pixels: np.ndarray, labels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, 32, 32, 3)
    out = np.empty((len(pixels), RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = labels
    out[:, 1:] = pixels.transpose(0, 3, 1, 2).reshape(len(pixels), PIXELS)
    return out.tobytes()


def write_cifar10(path: str | Path, pixels: np.ndarray, labels: np.ndarray, per_file: int = 10000) -> list[Path]:
    """Write arrays as data_batch_{1..k}.bin files in the binary batch format."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for k, start in enumerate(range(0, len(labels), per_file), start=1):
        f = directory / f"data_batch_{k}.bin"
        f.write_bytes(encode_records(pixels[start:start + per_file], labels[start:start + per_file]))
        written.append(f)
    return written


def make_split(
    labels: np.ndarray | Sequence[ImageRecord],
    n_train: int,
    n_query: int,
    seed: int,
    n_gallery: int | None = None,
    gallery_includes_train: bool = False,
) -> DatasetSplit:
    """Stratified train/query/gallery split.

    Per-class quotas are ``n // C`` with the remainder handed to the lowest
    class indices. The gallery is everything left over (or a stratified
    ``n_gallery`` subset of it).
    """
    if len(labels) and isinstance(labels[0], ImageRecord):
        labels = np.array([r.label for r in labels], dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    total = len(labels)
    if n_train < 0 or n_query < 0 or n_train + n_query > total:
        raise DataError(f"n_train + n_query = {n_train + n_query} exceeds dataset size {total}")
    if n_gallery is not None and n_train + n_query + n_gallery > total and not gallery_includes_train:
        raise DataError("n_train + n_query + n_gallery exceeds dataset size")

    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = {c: rng.permutation(np.flatnonzero(labels == c)) for c in classes}

    def quotas(n, available):
        base, rem = divmod(n, len(classes))
        q = {c: base + (i < rem) for i, c in enumerate(classes)}
        for c in classes:
            if q[c] > available[c]:
                raise DataError(f"class {c} has only {available[c]} records, {q[c]} requested")
        return q

    avail = {c: len(members[c]) for c in classes}
    take_train = quotas(n_train, avail)
    avail = {c: avail[c] - take_train[c] for c in classes}
    take_query = quotas(n_query, avail)

    train, query, pool = [], [], []
    for c in classes:
        m = members[c]
        t, qn = take_train[c], take_query[c]
        train.append(m[:t])
        query.append(m[t:t + qn])
        pool.append(np.concatenate([m[t + qn:], m[:t]]) if gallery_includes_train else m[t + qn:])
    if n_gallery is None:
        gallery = np.concatenate(pool)
    else:
        take = quotas(n_gallery, {c: len(p) for c, p in zip(classes, pool)})
        gallery = np.concatenate([p[:take[c]] for c, p in zip(classes, pool)])
    return DatasetSplit(
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(query)),
        np.sort(gallery),
        seed,
        gallery_includes_train,
        labels,
    )


def sample_pairs(
    split: DatasetSplit | np.ndarray,
    labels: np.ndarray,
    batch_size: int,
    pos_fraction: float = 0.5,
    seed: int = 0,
) -> Pairs:
    """Draw ``batch_size`` labelled pairs from the training ids.

    ``round(batch_size * pos_fraction)`` pairs are positives (same label);
    the rest are negatives. Anchors are uniform over the training ids.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if not 0.0 <= pos_fraction <= 1.0:
        raise ValueError("pos_fraction must lie in [0, 1]")
    ids = split.train if isinstance(split, DatasetSplit) else np.asarray(split)
    labels = np.asarray(labels)
    ids = np.asarray(ids, dtype=np.int64)
    lab = labels[ids]
    rng = np.random.default_rng(seed)
    n_pos = int(round(batch_size * pos_fraction))
    n_neg = batch_size - n_pos

    order = np.argsort(lab, kind="stable")
    sorted_ids, sorted_lab = ids[order], lab[order]
    classes, starts, counts = np.unique(sorted_lab, return_index=True, return_counts=True)
    cls_index = np.searchsorted(classes, lab)

    # positives: anchor, then a different member of the same class
    a_pos = rng.integers(0, len(ids), n_pos)
    ci = cls_index[a_pos]
    if n_pos and (counts[ci] < 2).any():
        bad = classes[ci[counts[ci] < 2][0]]
        raise DataError(f"class {bad} has fewer than 2 members; cannot draw a positive pair")
    # position of the anchor within its class block
    pos_in_class = np.empty(len(ids), dtype=np.int64)
    pos_in_class[order] = np.arange(len(ids)) - np.repeat(starts, counts)
    offs = rng.integers(1, np.maximum(counts[ci], 2), n_pos) if n_pos else np.zeros(0, np.int64)
    partner_pos = (pos_in_class[a_pos] + offs) % counts[ci]
    p_first = ids[a_pos]
    p_second = sorted_ids[starts[ci] + partner_pos]

    # negatives: anchor, then a uniform draw from outside its class
    a_neg = rng.integers(0, len(ids), n_neg)
    if n_neg and len(classes) < 2:
        raise DataError("only one class present; cannot draw a negative pair")
    cj = cls_index[a_neg]
    n_other = len(ids) - counts[cj]
    r = rng.integers(0, np.maximum(n_other, 1), n_neg) if n_neg else np.zeros(0, np.int64)
    # skip over the anchor's own class block in sorted order
    r = np.where(r >= starts[cj], r + counts[cj], r)
    n_first = ids[a_neg]
    n_second = sorted_ids[r]

    first = np.concatenate([p_first, n_first])
    second = np.concatenate([p_second, n_second])
    y = np.concatenate([np.ones(n_pos, np.int64), -np.ones(n_neg, np.int64)])
    return Pairs(first, second, y)


def add_noise(record: ImageRecord, sigma: float, seed: int) -> ImageRecord:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noisy = noise_pixels(record.pixels[None], sigma, np.random.default_rng(seed))[0]
    return ImageRecord(noisy, record.label, record.id)


def noise_pixels(pixels: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian pixel noise on the 0-255 scale, rounded and clamped; input untouched."""
    if sigma == 0:
        return pixels.copy()
    out = pixels.astype(np.float64) + rng.normal(0.0, sigma, size=pixels.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
