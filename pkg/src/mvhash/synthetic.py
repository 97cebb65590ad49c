"""Synthetic 32x32 RGB classification data in the CIFAR-10 binary layout.

Stands in for CIFAR-10 when the real batches are unavailable. Each class is a
combination of cues that different views pick up: a foreground hue group
(colour histograms), a stripe orientation (HOG) and a stripe frequency
(LBP/HOG). The cue assignments overlap across classes, so no single view
separates all ten classes, and per-image nuisances (hue jitter, background,
contrast, pixel noise) keep every cue noisy.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mvhash.ingest import write_cifar10

N_CLASSES = 10
_HUE_GROUP = np.array([0, 0, 1, 1, 2, 2, 3, 3, 4, 4])
_ORIENT = np.array([0, 2, 1, 3, 0, 2, 1, 3, 2, 0])
_FREQ = np.array([0, 1, 1, 0, 1, 0, 0, 1, 0, 1])


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.choose(i, [c[0] for c in choices])
    g = np.choose(i, [c[1] for c in choices])
    b = np.choose(i, [c[2] for c in choices])
    return np.stack([r, g, b], axis=-1)


def make_images(n_per_class: int, seed: int = 0, difficulty: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(N x 32 x 32 x 3 uint8, N labels)`` with classes interleaved."""
    rng = np.random.default_rng(seed)
    n = n_per_class * N_CLASSES
    labels = np.tile(np.arange(N_CLASSES), n_per_class)

    hue = (_HUE_GROUP[labels] / 5.0 + rng.normal(0, 0.06 * difficulty, n)) % 1.0
    sat = np.clip(rng.uniform(0.35, 1.0, n), 0, 1)
    val = rng.uniform(0.45, 1.0, n)
    fg = _hsv_to_rgb(hue, sat, val)
    bg = rng.uniform(0.0, 1.0, (n, 3))

    theta = _ORIENT[labels] * np.pi / 4 + rng.normal(0, 0.18 * difficulty, n)
    freq = np.where(_FREQ[labels] == 1, 0.32, 0.14) * rng.uniform(0.8, 1.25, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    pattern = 0.5 + 0.5 * np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])
    contrast = rng.uniform(0.35, 1.0, n)[:, None, None, None]

    # soft blob occluder in background colour
    cy, cx = rng.uniform(0, 32, (2, n))
    rad = rng.uniform(3, 10, n)
    blob = np.exp(-((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2) / (2 * rad[:, None, None] ** 2))
    mask = (pattern * (1 - 0.8 * blob))[..., None] * contrast
    img = bg[:, None, None, :] * (1 - mask) + fg[:, None, None, :] * mask
    img = img * 255.0 + rng.normal(0, 12.0 * difficulty, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels.astype(np.int64)


def write_dataset(path: str | Path, n_per_class: int, seed: int = 0, difficulty: float = 1.0) -> Path:
    pixels, labels = make_images(n_per_class, seed, difficulty)
    write_cifar10(path, pixels, labels)
    return Path(path)
