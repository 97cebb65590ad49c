"""Relaxed hash heads, the pairwise hashing loss, and the two training stages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mvhash.config import TrainConfig, substream_seed
from mvhash.errors import DataError, NumericError
from mvhash.fusion import Fusion, pool_slots, pool_uniforms
from mvhash.ingest import sample_pairs
from mvhash.memory import MemoryModel
from mvhash.nn import MLP, MomentumSGD, make_head
from mvhash.viewrel import RelationMatrix, ViewClassifier, classifier_epoch

log = logging.getLogger(__name__)

WORD_BITS = 64


# --------------------------------------------------------------------------- loss


def _check_pair(b1: np.ndarray, b2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if b1.shape != b2.shape:
        raise DataError(f"code shapes differ: {b1.shape} vs {b2.shape}")
    return b1, b2


def pair_loss(b1, b2, y, a: float = 2.0, alpha: float = 0.01):
    """Pairwise hashing loss; works on single codes or row-stacked batches.

    ``-(y-1) max(a - d, 0) + (y+1) d + alpha (|| |b1|-1 ||_1 + || |b2|-1 ||_1)``
    with ``d`` the squared Euclidean distance.
    """
    b1, b2 = _check_pair(b1, b2)
    y = np.asarray(y, dtype=np.float64)
    d = ((b1 - b2) ** 2).sum(axis=-1)
    reg = np.abs(np.abs(b1) - 1.0).sum(axis=-1) + np.abs(np.abs(b2) - 1.0).sum(axis=-1)
    loss = -(y - 1.0) * np.maximum(a - d, 0.0) + (y + 1.0) * d + alpha * reg
    return float(loss) if loss.ndim == 0 else loss


def pair_loss_grad(b1, b2, y, a: float = 2.0, alpha: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Analytic subgradient of :func:`pair_loss`; kinks take the value 0."""
    b1, b2 = _check_pair(b1, b2)
    y = np.asarray(y, dtype=np.float64)
    diff = b1 - b2
    d = (diff ** 2).sum(axis=-1)
    hinge = (a - d > 0).astype(np.float64)
    coef = 2.0 * (y - 1.0) * hinge + 2.0 * (y + 1.0)
    g = coef[..., None] * diff if diff.ndim > 1 else coef * diff
    g1 = g + alpha * np.sign(np.abs(b1) - 1.0) * np.sign(b1)
    g2 = -g + alpha * np.sign(np.abs(b2) - 1.0) * np.sign(b2)
    return g1, g2


def weighted_objective(E: np.ndarray, view_codes: Sequence[np.ndarray], first: np.ndarray, second: np.ndarray,
                       y: np.ndarray, a: float = 2.0, alpha: float = 0.01) -> float:
    """Sum over pairs (n, i) and views m of ``E[n, m] * L_m(B_n^m, B_i^m, y)``.

    ``view_codes[m]`` holds the batch's codes for view m; ``first``/``second``
    index rows of it. Views are accumulated in order per pair, then pairs are
    summed, so a zero column contributes an exact ``+0.0``.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != len(view_codes):
        raise DataError(f"E must be N x {len(view_codes)}")
    if any(len(v) != len(E) for v in view_codes):
        raise DataError("E row count must match the batch size")
    per_pair = np.zeros(len(first))
    for m, codes in enumerate(view_codes):
        per_pair += E[first, m] * pair_loss(codes[first], codes[second], y, a, alpha)
    return float(np.sum(per_pair))


def all_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Every ordered pair (n, i) of a batch with its +-1 similarity."""
    labels = np.asarray(labels)
    n = len(labels)
    first, second = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    first, second = first.ravel(), second.ravel()
    y = np.where(labels[first] == labels[second], 1, -1)
    return first, second, y


# ------------------------------------------------------------------ binary codes


@dataclass(frozen=True, eq=False)
class BinaryCode:
    words: np.ndarray  # uint64, bit k of the code is bit k % 64 of word k // 64
    q: int

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words[None], self.q)[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryCode) and self.q == other.q and np.array_equal(self.words, other.words)


def n_words(q: int) -> int:
    return -(-q // WORD_BITS)


_SHIFTS = np.arange(WORD_BITS, dtype=np.uint64)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an ``N x q`` 0/1 array into ``N x ceil(q/64)`` uint64 words (LSB first)."""
    bits = np.atleast_2d(np.asarray(bits)).astype(np.uint64)
    n, q = bits.shape
    W = n_words(q)
    padded = np.zeros((n, W * WORD_BITS), dtype=np.uint64)
    padded[:, :q] = bits
    return (padded.reshape(n, W, WORD_BITS) << _SHIFTS).sum(axis=2, dtype=np.uint64)


def unpack_bits(words: np.ndarray, q: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    bits = (words[:, :, None] >> _SHIFTS) & np.uint64(1)
    return bits.reshape(len(words), -1)[:, :q].astype(np.uint8)


def binarize_batch(relaxed: np.ndarray) -> np.ndarray:
    """Sign-quantize rows (``>= 0`` maps to bit 1) and pack them."""
    return pack_bits(np.asarray(relaxed) >= 0)


def binarize(code) -> BinaryCode:
    code = np.asarray(code, dtype=np.float64).ravel()
    return BinaryCode(binarize_batch(code[None])[0], len(code))


# ---------------------------------------------------------------------- training


def concat_views(views: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(views, axis=1)


@dataclass
class Stage1Result:
    classifiers: list[ViewClassifier]
    basic: MLP
    history: list[dict] = field(default_factory=list)


def _pair_batches(cfg: TrainConfig, labels: np.ndarray, epoch: int, tag: str):
    positions = np.arange(len(labels))
    pairs = sample_pairs(positions, labels, cfg.pairs_per_epoch, cfg.pos_fraction,
                         substream_seed(cfg.seed, tag, epoch))
    for start in range(0, len(pairs), cfg.batch_size):
        yield pairs[start:start + cfg.batch_size]


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"{what} became non-finite")
    return float(value)


def train_stage1(views: Sequence[np.ndarray], labels: np.ndarray, cfg: TrainConfig,
                 n_classes: int = 10) -> Stage1Result:
    """Per-view softmax classifiers plus the basic hash head on concatenated views.

    ``views`` are standardized training features, rows aligned with ``labels``.
    Each epoch runs one classifier pass per view and one pass of pair batches
    for the basic head.
    """
    labels = np.asarray(labels, dtype=np.int64)
    init = np.random.default_rng(substream_seed(cfg.seed, "init-stage1"))
    classifiers = [ViewClassifier(m, MLP([x.shape[1], n_classes], "linear", init), cfg.classifier_lr,
                                  cfg.epochs_stage1) for m, x in enumerate(views)]
    x_all = concat_views(views)
    basic = make_head(x_all.shape[1], cfg.q_basic, cfg.hidden_layers, cfg.hidden_width, "tanh", init)
    clf_opts = [MomentumSGD(c.net.params, cfg.classifier_lr, cfg.momentum) for c in classifiers]
    opt = MomentumSGD(basic.params, cfg.lr, cfg.momentum)
    shuffle = np.random.default_rng(substream_seed(cfg.seed, "classifier-order"))
    result = Stage1Result(classifiers, basic)

    for epoch in range(cfg.epochs_stage1):
        lp = 0.0
        for clf, o, x in zip(classifiers, clf_opts, views):
            loss = classifier_epoch(clf, o, x, labels, cfg.classifier_batch, shuffle)
            clf.loss_history.append(loss)
            lp += loss
        lc, count = 0.0, 0
        for batch in _pair_batches(cfg, labels, epoch, "pairs-stage1"):
            rows = np.concatenate([batch.first, batch.second])
            codes, acts = basic.forward(x_all[rows], cache=True)
            P = len(batch)
            loss = pair_loss(codes[:P], codes[P:], batch.y, cfg.a, cfg.alpha)
            g1, g2 = pair_loss_grad(codes[:P], codes[P:], batch.y, cfg.a, cfg.alpha)
            grads, _ = basic.backward(acts, np.concatenate([g1, g2]) / P)
            opt.step(grads)
            lc += loss.sum()
            count += P
        row = {"epoch": epoch, "stage": 1, "Lp": _finite(lp, "classification loss"),
               "Lc": _finite(lc / max(count, 1), "basic hash loss"), "L": None, "Lw": None}
        result.history.append(row)
        log.info("stage1 epoch %d  Lp=%.4f  Lc=%.4f", epoch, row["Lp"], row["Lc"])
    return result


@dataclass
class Stage2Result:
    view_heads: list[MLP]
    projection: MLP
    fusion: Fusion
    memory: MemoryModel
    relation: RelationMatrix
    relation_used: np.ndarray
    history: list[dict] = field(default_factory=list)


def make_fusion(cfg: TrainConfig, n_views: int) -> Fusion:
    v = sorted(cfg.fusion_vector)[len(cfg.fusion_vector) - n_views:] if cfg.fusion == "r" else cfg.fusion_vector
    return Fusion(cfg.fusion, cfg.q_basic, cfg.q_view, n_views, v, cfg.cfusion_budget, cfg.cfusion_repeats,
                  cfg.pool_k, cfg.pool_w, seed=substream_seed(cfg.seed, "fusion"))


def relation_for_views(rel: RelationMatrix, cfg: TrainConfig) -> np.ndarray:
    """The weights the model actually uses: E restricted to the active views, or ones."""
    if not cfg.use_relation:
        return np.ones(len(cfg.views))
    return np.asarray(rel.normalized, dtype=np.float64)[list(cfg.views)]


def train_stage2(relation_fn: Callable[[int], RelationMatrix], views: Sequence[np.ndarray], labels: np.ndarray,
                 ids: np.ndarray, basic: MLP, cfg: TrainConfig, finetune_basic: bool = True) -> Stage2Result:
    """Per-view heads, fusion projection and memory model under the weighted objective.

    The per-batch objective is the E-weighted pairwise loss over the view
    codes plus the pairwise loss of the fused output codes. ``relation_fn``
    is called once per epoch and returns that epoch's relation matrix; the
    memory model regresses onto it with its own loss only.
    """
    labels = np.asarray(labels, dtype=np.int64)
    active = list(cfg.views)
    if not active:
        raise DataError("stage 2 needs at least one view")
    init = np.random.default_rng(substream_seed(cfg.seed, "init-stage2"))
    heads = [make_head(views[m].shape[1], cfg.q_view, cfg.hidden_layers, cfg.hidden_width, "tanh", init)
             for m in active]
    fusion = make_fusion(cfg, len(active))
    projection = MLP([fusion.out_len, cfg.q], "tanh", init)
    x_all = concat_views(views)
    memory = MemoryModel.init(x_all.shape[1], len(active), substream_seed(cfg.seed, "init-memory"))

    params = [p for h in heads for p in h.params] + projection.params
    if finetune_basic:
        params += basic.params
    opt = MomentumSGD(params, cfg.lr, cfg.momentum)
    uniforms = None
    if cfg.fusion == "p":
        uniforms = pool_uniforms(fusion.seed, ids, pool_slots(cfg.q_view, cfg.pool_k, cfg.pool_w))

    history = []
    rel = None
    E = None
    for epoch in range(cfg.epochs_stage2):
        rel = relation_fn(epoch)
        E = relation_for_views(rel, cfg)
        total_L, count = 0.0, 0
        for batch in _pair_batches(cfg, labels, epoch, "pairs-stage2"):
            P = len(batch)
            rows = np.concatenate([batch.first, batch.second])
            b_codes, b_acts = basic.forward(x_all[rows], cache=True)
            v_out = [h.forward(views[m][rows], cache=True) for h, m in zip(heads, active)]
            v_codes = [c for c, _ in v_out]
            expanded, idx = fusion.forward(b_codes, v_codes, E, uniforms=None if uniforms is None else uniforms[rows])
            fused, p_acts = projection.forward(expanded, cache=True)

            first, second = np.arange(P), np.arange(P, 2 * P)
            L_views = weighted_objective(np.broadcast_to(E, (2 * P, len(E))), v_codes, first, second, batch.y,
                                         cfg.a, cfg.alpha)
            L_fused = pair_loss(fused[:P], fused[P:], batch.y, cfg.a, cfg.alpha).sum()
            total_L += L_views + L_fused
            count += P

            g1, g2 = pair_loss_grad(fused[:P], fused[P:], batch.y, cfg.a, cfg.alpha)
            p_grads, g_exp = projection.backward(p_acts, np.concatenate([g1, g2]) / P)
            g_basic, g_views = fusion.backward(g_exp, idx)
            grads = []
            for m, ((codes, acts), gv) in enumerate(zip(v_out, g_views)):
                w1, w2 = pair_loss_grad(codes[:P], codes[P:], batch.y, cfg.a, cfg.alpha)
                gv = gv + E[m] * np.concatenate([w1, w2]) / P
                hg, _ = heads[m].backward(acts, gv)
                grads += hg
            grads += p_grads
            if finetune_basic:
                bg, _ = basic.backward(b_acts, g_basic)
                grads += bg
            opt.step(grads)

        lw = memory.fit(x_all, np.broadcast_to(E, (len(x_all), len(E))), cfg.memory_epochs, cfg.memory_lr,
                        substream_seed(cfg.seed, "memory", epoch), momentum=cfg.momentum)
        row = {"epoch": cfg.epochs_stage1 + epoch, "stage": 2, "Lp": None, "Lc": None,
               "L": _finite(total_L / max(count, 1), "weighted objective"), "Lw": _finite(lw, "memory loss")}
        history.append(row)
        log.info("stage2 epoch %d  L=%.4f  Lw=%.6f  E=%s", epoch, row["L"], row["Lw"], np.round(E, 3))

    if rel is None:
        rel = relation_fn(0)
        E = relation_for_views(rel, cfg)
    return Stage2Result(heads, projection, fusion, memory, rel, E, history)
