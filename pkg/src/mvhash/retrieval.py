"""Hamming index with radius pruning by multi-probe table lookups and continuous re-ranking."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from mvhash import container
from mvhash.errors import DataError
from mvhash.hashcore import BinaryCode, n_words, unpack_bits

INDEX_MAGIC = b"MVHI"
CODES_MAGIC = b"MVCD"


def hamming_distance(a: BinaryCode, b: BinaryCode) -> int:
    """Popcount of the XOR of two packed codes."""
    if a.q != b.q:
        raise DataError(f"code lengths differ: {a.q} vs {b.q}")
    return int(np.bitwise_count(np.bitwise_xor(a.words, b.words)).sum())


def hamming_to_all(words: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Distances from one packed query (``W`` words) to every row of ``N x W`` words."""
    return np.bitwise_count(np.bitwise_xor(words, query[None, :])).sum(axis=1, dtype=np.int64)


def code_key(words: np.ndarray) -> int:
    key = 0
    for k, w in enumerate(np.asarray(words, dtype=np.uint64).tolist()):
        key |= int(w) << (64 * k)
    return key


def n_probes(q: int, radius: int) -> int:
    return sum(comb(q, r) for r in range(radius + 1))


@functools.lru_cache(maxsize=16)
def probe_masks(q: int, radius: int) -> tuple[int, ...]:
    """XOR masks flipping every subset of at most ``radius`` bit positions."""
    masks = []
    for r in range(radius + 1):
        for pos in itertools.combinations(range(q), r):
            masks.append(sum(1 << p for p in pos))
    return tuple(masks)


@dataclass
class CodeSet:
    """Codes for a set of images: ids, packed binary words and relaxed codes."""

    ids: np.ndarray
    words: np.ndarray
    continuous: np.ndarray
    q: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.words = np.asarray(self.words, dtype=np.uint64).reshape(len(self.ids), n_words(self.q))
        self.continuous = np.asarray(self.continuous, dtype=np.float64).reshape(len(self.ids), self.q)

    def __len__(self) -> int:
        return len(self.ids)

    def code(self, row: int) -> BinaryCode:
        return BinaryCode(self.words[row], self.q)

    def save(self, path: str | Path, magic: bytes = CODES_MAGIC) -> None:
        meta = dict(self.meta, q=self.q, n=len(self), words=n_words(self.q))
        container.save(path, magic, meta, {"ids": self.ids, "words": self.words, "continuous": self.continuous})

    @classmethod
    def load(cls, path: str | Path, magic: bytes = CODES_MAGIC) -> CodeSet:
        meta, arrays = container.load(path, magic)
        q = meta.pop("q")
        meta.pop("n", None)
        meta.pop("words", None)
        return cls(arrays["ids"], arrays["words"], arrays["continuous"], q, meta)


@dataclass
class QueryResult:
    query_id: int
    ids: np.ndarray
    hamming: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def items(self) -> list[tuple[int, int, float]]:
        return list(zip(self.ids.tolist(), self.hamming.tolist(), self.distance.tolist()))


class HammingIndex:
    """Hash table from the exact packed code to the rows holding it."""

    def __init__(self, codes: CodeSet):
        if len(np.unique(codes.ids)) != len(codes.ids):
            raise DataError("duplicate id in index")
        self.codes = codes
        self.q = codes.q
        self.table: dict[int, list[int]] = {}
        for row, words in enumerate(codes.words):
            self.table.setdefault(code_key(words), []).append(row)

    @classmethod
    def build(cls, ids, words, continuous, q: int | None = None) -> HammingIndex:
        words = np.asarray(words, dtype=np.uint64)
        continuous = np.asarray(continuous, dtype=np.float64)
        if q is None:
            if continuous.ndim == 2 and continuous.shape[1]:
                q = continuous.shape[1]
            elif words.ndim == 2 and words.shape[1]:
                q = 64 * words.shape[1]
            else:
                q = 64  # nothing to infer from an empty build
        if words.ndim == 2 and len(words) and words.shape[1] != n_words(q):
            raise DataError("mixed code lengths")
        return cls(CodeSet(ids, words, continuous, q))

    def __len__(self) -> int:
        return len(self.codes)

    def buckets(self) -> dict[int, list[int]]:
        return {k: [int(self.codes.ids[r]) for r in rows] for k, rows in self.table.items()}

    def candidates(self, code: BinaryCode | np.ndarray, radius: int = 2) -> np.ndarray:
        """Rows whose code lies within ``radius`` bit flips of the query."""
        words = code.words if isinstance(code, BinaryCode) else np.asarray(code, dtype=np.uint64)
        if radius > self.q:
            raise DataError(f"radius {radius} exceeds code length {self.q}")
        if len(words) != n_words(self.q):
            raise DataError("query code length does not match the index")
        key = code_key(words)
        rows: list[int] = []
        table = self.table
        for mask in probe_masks(self.q, radius):
            hit = table.get(key ^ mask)
            if hit:
                rows.extend(hit)
        return np.asarray(sorted(rows), dtype=np.int64)

    def query(self, code: BinaryCode | np.ndarray, continuous: np.ndarray | None = None, radius: int = 2,
              query_id: int = -1) -> QueryResult:
        """Radius pruning, then ascending re-rank by Euclidean distance of relaxed codes (ties by id)."""
        words = code.words if isinstance(code, BinaryCode) else np.asarray(code, dtype=np.uint64)
        rows = self.candidates(words, radius)
        if continuous is None:
            continuous = unpack_bits(words[None], self.q)[0] * 2.0 - 1.0
        cand = self.codes.continuous[rows]
        dist = np.sqrt(((cand - np.asarray(continuous, dtype=np.float64)[None]) ** 2).sum(axis=1))
        ham = hamming_to_all(self.codes.words[rows], words) if len(rows) else np.zeros(0, np.int64)
        ids = self.codes.ids[rows]
        order = np.lexsort((ids, dist))
        return QueryResult(query_id, ids[order], ham[order], dist[order])

    def save(self, path: str | Path) -> None:
        self.codes.save(path, INDEX_MAGIC)

    @classmethod
    def load(cls, path: str | Path) -> HammingIndex:
        return cls(CodeSet.load(path, INDEX_MAGIC))


def query(index: HammingIndex, code: BinaryCode, radius: int = 2, continuous: np.ndarray | None = None) -> QueryResult:
    return index.query(code, continuous, radius)


def full_ranking(gallery: CodeSet, words: np.ndarray, continuous: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear scan ordering of every gallery row: Hamming, then continuous distance, then id."""
    ham = hamming_to_all(gallery.words, words)
    dist = ((gallery.continuous - continuous[None]) ** 2).sum(axis=1)
    order = np.lexsort((gallery.ids, dist, ham))
    return order, ham
