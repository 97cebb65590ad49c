"""Hamming-space fusion of the basic code and per-view codes.

Three methods build an expanded code from the same inputs:

* ``r`` replication: views ranked by relation weight, each repeated by its
  fusion-vector entry (largest entry to the top-ranked view);
* ``c`` view-code: head (basic code) / mid (weight-proportional cyclic
  repetition) / end (per-view scalar view-codes cycled to fill a fixed budget);
* ``p`` probability view pooling: nearest-neighbour expansion, then each
  pooling slot max-pools the window of one view drawn from the weight
  distribution.

Every method is expressed as a gather from the source row
``[basic | view_1 | ... | view_M | viewcode_1 ... viewcode_M]`` so forward and
backward passes share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mvhash.errors import DataError
from mvhash.nn import MLP


@dataclass
class ExpandedCode:
    values: np.ndarray
    layout: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)


def rank_views(E: np.ndarray) -> np.ndarray:
    """View indices by descending weight; ties keep ascending view index."""
    return np.argsort(-np.asarray(E, dtype=np.float64), kind="stable")


def replication_plan(q_basic: int, q_view: int, E: np.ndarray, v: Sequence[int]) -> tuple[np.ndarray, list[dict]]:
    E = np.asarray(E, dtype=np.float64)
    M = len(E)
    if len(v) != M:
        raise DataError(f"fusion vector has {len(v)} entries for {M} views")
    reps = sorted((int(x) for x in v), reverse=True)
    idx = [np.arange(q_basic)]
    layout = [{"segment": "basic", "start": 0, "length": q_basic}]
    pos = q_basic
    for rank, m in enumerate(rank_views(E)):
        cols = q_basic + m * q_view + np.arange(q_view)
        idx.append(np.tile(cols, reps[rank]))
        layout.append({"segment": "view", "view": int(m), "rank": rank, "repeats": reps[rank],
                       "start": pos, "length": q_view * reps[rank]})
        pos += q_view * reps[rank]
    return np.concatenate(idx), layout


def viewcode_plan(q_basic: int, q_view: int, E: np.ndarray, budget: int,
                  repeats: float = 1.0) -> tuple[np.ndarray, list[dict]]:
    E = np.asarray(E, dtype=np.float64)
    M = len(E)
    if budget < q_basic + q_view:
        raise DataError("budget must be at least q_basic + q_view")
    top = E.max() if M else 0.0
    coef = E / top if top > 0 else np.zeros(M)
    lengths = np.floor(repeats * q_view * coef + 1e-9).astype(np.int64)
    mid = int(lengths.sum())
    if q_basic + mid > budget:
        raise DataError(f"budget too small for E: head {q_basic} + mid {mid} > {budget}")
    idx = [np.arange(q_basic)]
    layout = [{"segment": "head", "start": 0, "length": q_basic}]
    pos = q_basic
    for m in range(M):
        cols = q_basic + m * q_view + (np.arange(lengths[m]) % q_view)
        idx.append(cols)
        layout.append({"segment": "mid", "view": m, "start": pos, "length": int(lengths[m])})
        pos += int(lengths[m])
    n_end = budget - pos
    const0 = q_basic + M * q_view
    idx.append(const0 + np.arange(n_end) % M)
    layout.append({"segment": "end", "start": pos, "length": n_end})
    return np.concatenate(idx), layout


def pool_slots(q_view: int, k: int, w: int) -> int:
    if k < 1:
        raise DataError("expansion factor k must be >= 1")
    if (k * q_view) % w:
        raise DataError(f"filter width {w} does not divide {k * q_view}")
    return k * q_view // w


def view_probabilities(E: np.ndarray) -> np.ndarray:
    E = np.clip(np.asarray(E, dtype=np.float64), 0.0, None)
    total = E.sum()
    return E / total if total > 0 else np.full(len(E), 1.0 / len(E))


def pool_uniforms(seed: int, ids: np.ndarray, slots: int) -> np.ndarray:
    """One uniform draw per (image, slot), keyed by (seed, image id)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((len(ids), slots))
    for r, i in enumerate(ids.tolist()):
        out[r] = np.random.default_rng([seed, i]).random(slots)
    return out


def sample_views(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    choice = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(choice, len(probs) - 1)


def pooling_index(view_codes: np.ndarray, choice: np.ndarray, q_basic: int, q_view: int, k: int,
                  w: int) -> np.ndarray:
    """Source-column index of each pooled slot.

    ``view_codes`` is ``B x M x q_view``; ``choice`` is ``B x slots``. Position
    ``t`` of an expanded view code holds original element ``t // k``.
    """
    slots = choice.shape[1]
    window = (np.arange(slots)[:, None] * w + np.arange(w)[None, :]) // k  # slots x w
    rows = np.arange(len(choice))[:, None, None]
    vals = view_codes[rows, choice[:, :, None], window[None]]  # B x slots x w
    best = np.take_along_axis(window[None].repeat(len(choice), 0), vals.argmax(axis=2)[..., None], 2)[..., 0]
    return q_basic + choice * q_view + best


class Fusion:
    """Batched fusion for one method and fixed geometry."""

    def __init__(self, method: str, q_basic: int, q_view: int, n_views: int, fusion_vector=(1, 4, 8, 16),
                 budget: int = 512, repeats: float = 1.0, k: int = 4, w: int = 4, seed: int = 0,
                 view_codes: np.ndarray | None = None):
        if method not in ("r", "c", "p"):
            raise ValueError(f"unknown fusion method {method!r}")
        self.method = method
        self.q_basic = q_basic
        self.q_view = q_view
        self.n_views = n_views
        self.fusion_vector = tuple(int(x) for x in fusion_vector)
        self.budget = budget
        self.repeats = repeats
        self.k = k
        self.w = w
        self.seed = seed
        if view_codes is None:
            view_codes = np.random.default_rng(seed).uniform(-1.0, 1.0, n_views)
        self.view_codes = np.asarray(view_codes, dtype=np.float64)
        if method == "r" and len(self.fusion_vector) != n_views:
            raise DataError(f"fusion vector has {len(self.fusion_vector)} entries for {n_views} views")
        if method == "p":
            pool_slots(q_view, k, w)

    @property
    def source_width(self) -> int:
        return self.q_basic + self.n_views * (self.q_view + 1)

    @property
    def out_len(self) -> int:
        if self.method == "r":
            return self.q_basic + self.q_view * sum(self.fusion_vector)
        if self.method == "c":
            return self.budget
        return self.q_basic + pool_slots(self.q_view, self.k, self.w)

    def describe(self) -> dict:
        d = {"method": self.method, "q_basic": self.q_basic, "q_view": self.q_view, "n_views": self.n_views,
             "out_len": self.out_len}
        if self.method == "r":
            d["fusion_vector"] = list(self.fusion_vector)
        elif self.method == "c":
            d.update(budget=self.budget, repeats=self.repeats, view_codes=self.view_codes.tolist())
        else:
            d.update(k=self.k, w=self.w, slots=pool_slots(self.q_view, self.k, self.w), seed=self.seed)
        return d

    def plan(self, E: np.ndarray) -> tuple[np.ndarray, list[dict]] | None:
        if self.method == "r":
            return replication_plan(self.q_basic, self.q_view, E, self.fusion_vector)
        if self.method == "c":
            return viewcode_plan(self.q_basic, self.q_view, E, self.budget, self.repeats)
        return None

    def source(self, basic: np.ndarray, views: Sequence[np.ndarray]) -> np.ndarray:
        B = len(basic)
        return np.concatenate([basic, *views, np.broadcast_to(self.view_codes, (B, self.n_views))], axis=1)

    def forward(self, basic: np.ndarray, views: Sequence[np.ndarray], E: np.ndarray,
                ids: np.ndarray | None = None, uniforms: np.ndarray | None = None):
        """Return ``(expanded B x L, gather index)``.

        ``E`` is a length-M vector shared by the batch or a ``B x M`` matrix of
        per-row weights (memory-network predictions). Pooling needs either
        image ``ids`` or precomputed ``uniforms``.
        """
        if len(views) != self.n_views:
            raise DataError(f"expected {self.n_views} view codes, got {len(views)}")
        if any(v.shape[1] != self.q_view for v in views) or basic.shape[1] != self.q_basic:
            raise DataError("code length mismatch")
        src = self.source(basic, views)
        E = np.asarray(E, dtype=np.float64)
        if self.method in ("r", "c"):
            if E.ndim == 1:
                idx, _ = self.plan(E)
                return src[:, idx], idx
            rows = [self.plan(e)[0] for e in E]
            idx = np.stack(rows)
            return np.take_along_axis(src, idx, 1), idx
        slots = pool_slots(self.q_view, self.k, self.w)
        if uniforms is None:
            if ids is None:
                raise DataError("probability pooling needs image ids")
            uniforms = pool_uniforms(self.seed, ids, slots)
        if E.ndim == 1:
            choice = sample_views(view_probabilities(E), uniforms)
        else:
            choice = np.stack([sample_views(view_probabilities(e), u) for e, u in zip(E, uniforms)])
        vc = np.stack(views, axis=1)
        pooled_idx = pooling_index(vc, choice, self.q_basic, self.q_view, self.k, self.w)
        idx = np.concatenate([np.broadcast_to(np.arange(self.q_basic), (len(src), self.q_basic)), pooled_idx], 1)
        return np.take_along_axis(src, idx, 1), idx

    def backward(self, grad: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Scatter-add expanded-code gradients back to basic and view codes."""
        B = len(grad)
        g = np.zeros((B, self.source_width))
        if idx.ndim == 1:
            A = np.zeros((len(idx), self.source_width))
            A[np.arange(len(idx)), idx] = 1.0
            g = grad @ A
        else:
            np.add.at(g, (np.arange(B)[:, None], idx), grad)
        basic = g[:, :self.q_basic]
        views = [g[:, self.q_basic + m * self.q_view:self.q_basic + (m + 1) * self.q_view]
                 for m in range(self.n_views)]
        return basic, views


def replication_fuse(basic: np.ndarray, view_codes: Sequence[np.ndarray], E: np.ndarray,
                     v: Sequence[int] = (1, 4, 8, 16)) -> ExpandedCode:
    basic = np.asarray(basic, dtype=np.float64)
    _check_views(view_codes, E)
    idx, layout = replication_plan(len(basic), len(view_codes[0]), E, v)
    src = np.concatenate([basic, *view_codes])
    return ExpandedCode(src[idx], layout)


def viewcode_fuse(basic: np.ndarray, view_codes: Sequence[np.ndarray], E: np.ndarray, budget: int = 512,
                  codes: np.ndarray | None = None, seed: int = 0, repeats: float = 1.0) -> ExpandedCode:
    """View-code fusion of one image; ``codes`` are the per-view scalar view-codes."""
    basic = np.asarray(basic, dtype=np.float64)
    _check_views(view_codes, E)
    M = len(view_codes)
    if codes is None:
        codes = np.random.default_rng(seed).uniform(-1.0, 1.0, M)
    idx, layout = viewcode_plan(len(basic), len(view_codes[0]), E, budget, repeats)
    src = np.concatenate([basic, *view_codes, codes])
    return ExpandedCode(src[idx], layout)


def prob_view_pool(view_codes: Sequence[np.ndarray], E: np.ndarray, k: int = 4, w: int = 4, seed: int = 0,
                   image_id: int = 0) -> ExpandedCode:
    _check_views(view_codes, E)
    q_view = len(view_codes[0])
    slots = pool_slots(q_view, k, w)
    choice = sample_views(view_probabilities(E), pool_uniforms(seed, [image_id], slots))
    vc = np.stack([np.asarray(v, dtype=np.float64) for v in view_codes])[None]
    idx = pooling_index(vc, choice, 0, q_view, k, w)[0]
    values = np.concatenate(view_codes)[idx]
    layout = [{"segment": "pool", "slot": s, "view": int(choice[0, s])} for s in range(slots)]
    return ExpandedCode(values, layout)


def _check_views(view_codes: Sequence[np.ndarray], E: np.ndarray) -> None:
    if len(view_codes) != len(E):
        raise DataError(f"{len(view_codes)} view codes but {len(E)} relation weights")
    if len({len(v) for v in view_codes}) > 1:
        raise DataError("view codes differ in length")


def project(expanded: ExpandedCode | np.ndarray, projection: MLP) -> np.ndarray:
    x = expanded.values if isinstance(expanded, ExpandedCode) else np.asarray(expanded, dtype=np.float64)
    if x.shape[-1] != projection.in_dim:
        raise DataError(f"expanded length {x.shape[-1]} != projection input {projection.in_dim}")
    return projection(x)
