"""Handcrafted image views: RGB histogram, HSV histogram, uniform LBP, HOG.

Every extractor has a single-record form (``rgb_histogram(record)``) and a
batched form over an ``N x 32 x 32 x 3`` uint8 array (``rgb_histograms``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mvhash.errors import DataError
from mvhash.ingest import ImageRecord, records_to_arrays

VIEW_NAMES = ("rgb", "hsv", "lbp", "hog")
RGB_BINS = 16
HSV_BINS = (18, 8, 8)
LBP_BINS = 59
HOG_ORIENTATIONS = 9
HOG_CELL = 8
HOG_BLOCK = 2
HOG_EPS = 1e-6
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class FeatureViewSet:
    views: list[np.ndarray]
    id: int

    @property
    def dims(self) -> list[int]:
        return [len(v) for v in self.views]


def _as_batch(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim == 3:
        pixels = pixels[None]
    if pixels.dtype != np.uint8 or pixels.shape[-1] != 3:
        raise DataError("expected uint8 RGB images of shape (N, H, W, 3)")
    return pixels


def grayscale(pixels: np.ndarray) -> np.ndarray:
    return _as_batch(pixels).astype(np.float64) @ GRAY_WEIGHTS


def rgb_histograms(pixels: np.ndarray) -> np.ndarray:
    px = _as_batch(pixels)
    n = len(px)
    bins = (px >> 4).astype(np.int64).reshape(n, -1, 3) + RGB_BINS * np.arange(3)
    flat = bins + 3 * RGB_BINS * np.arange(n)[:, None, None]
    counts = np.bincount(flat.ravel(), minlength=n * 3 * RGB_BINS).reshape(n, 3 * RGB_BINS)
    return counts / counts.sum(axis=1, keepdims=True)


def rgb_to_hsv(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """H in degrees [0, 360), S and V in [0, 1]; H = 0 where the pixel is gray."""
    x = _as_batch(pixels).astype(np.float64) / 255.0
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    mx = x.max(axis=-1)
    mn = x.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        mx == r,
        np.mod((g - b) / safe, 6.0),
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, 60.0 * h, 0.0)
    h = np.mod(h, 360.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def hsv_histograms(pixels: np.ndarray) -> np.ndarray:
    h, s, v = rgb_to_hsv(pixels)
    n = len(h)
    nh, ns, nv = HSV_BINS
    hb = np.minimum((h / (360.0 / nh)).astype(np.int64), nh - 1)
    sb = np.minimum((s * ns).astype(np.int64), ns - 1)
    vb = np.minimum((v * nv).astype(np.int64), nv - 1)
    total = nh + ns + nv
    idx = np.stack([hb, sb + nh, vb + nh + ns], axis=-1).reshape(n, -1)
    idx = idx + total * np.arange(n)[:, None]
    counts = np.bincount(idx.ravel(), minlength=n * total).reshape(n, total)
    return counts / counts.sum(axis=1, keepdims=True)


# neighbours in circular order, bit k has weight 2**k
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _uniform_table() -> np.ndarray:
    table = np.full(256, LBP_BINS - 1, dtype=np.int64)
    nxt = 0
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        transitions = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
        if transitions <= 2:
            table[code] = nxt
            nxt += 1
    assert nxt == LBP_BINS - 1
    return table


UNIFORM_LBP_TABLE = _uniform_table()


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """Raw 8-bit LBP codes of the interior pixels (neighbour > centre sets the bit)."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim == 2:
        gray = gray[None]
    h, w = gray.shape[1:]
    centre = gray[:, 1:h - 1, 1:w - 1]
    codes = np.zeros(centre.shape, dtype=np.int64)
    for k, (dr, dc) in enumerate(LBP_OFFSETS):
        nb = gray[:, 1 + dr:h - 1 + dr, 1 + dc:w - 1 + dc]
        codes |= (nb > centre).astype(np.int64) << k
    return codes


def lbp_histograms(pixels: np.ndarray, gray: np.ndarray | None = None) -> np.ndarray:
    if gray is None:
        gray = grayscale(pixels)
    bins = UNIFORM_LBP_TABLE[lbp_codes(gray)]
    n = len(bins)
    flat = bins.reshape(n, -1) + LBP_BINS * np.arange(n)[:, None]
    counts = np.bincount(flat.ravel(), minlength=n * LBP_BINS).reshape(n, LBP_BINS)
    return counts / counts.sum(axis=1, keepdims=True)


def hog_descriptors(pixels: np.ndarray, gray: np.ndarray | None = None) -> np.ndarray:
    if gray is None:
        gray = grayscale(pixels)
    gray = np.asarray(gray, dtype=np.float64)
    n, h, w = gray.shape
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, :, 1:-1] = gray[:, :, 2:] - gray[:, :, :-2]
    gy[:, 1:-1, :] = gray[:, 2:, :] - gray[:, :-2, :]
    mag = np.hypot(gx, gy)
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    obin = np.minimum((angle / (180.0 / HOG_ORIENTATIONS)).astype(np.int64), HOG_ORIENTATIONS - 1)

    cr, cc = h // HOG_CELL, w // HOG_CELL
    rows = np.arange(h)[:, None] // HOG_CELL
    cols = np.arange(w)[None, :] // HOG_CELL
    cell = np.broadcast_to(rows * cc + cols, (h, w))
    flat = (np.arange(n)[:, None, None] * (cr * cc) + cell) * HOG_ORIENTATIONS + obin
    hist = np.bincount(flat.ravel(), weights=mag.ravel(), minlength=n * cr * cc * HOG_ORIENTATIONS)
    hist = hist.reshape(n, cr, cc, HOG_ORIENTATIONS)

    br, bc = cr - HOG_BLOCK + 1, cc - HOG_BLOCK + 1
    blocks = np.empty((n, br, bc, HOG_BLOCK, HOG_BLOCK, HOG_ORIENTATIONS))
    for i in range(HOG_BLOCK):
        for j in range(HOG_BLOCK):
            blocks[:, :, :, i, j] = hist[:, i:i + br, j:j + bc]
    norm = np.sqrt((blocks ** 2).sum(axis=(3, 4, 5), keepdims=True) + HOG_EPS ** 2)
    return (blocks / norm).reshape(n, -1)


def extract_views(pixels: np.ndarray) -> list[np.ndarray]:
    """All four views for a batch; returns one ``N x d_m`` array per view."""
    px = _as_batch(pixels)
    gray = grayscale(px)
    return [rgb_histograms(px), hsv_histograms(px), lbp_histograms(px, gray), hog_descriptors(px, gray)]


def rgb_histogram(record: ImageRecord) -> np.ndarray:
    return rgb_histograms(record.pixels.reshape(1, 32, 32, 3))[0]


def hsv_histogram(record: ImageRecord) -> np.ndarray:
    return hsv_histograms(record.pixels.reshape(1, 32, 32, 3))[0]


def lbp_descriptor(record: ImageRecord) -> np.ndarray:
    return lbp_histograms(record.pixels.reshape(1, 32, 32, 3))[0]


def hog_descriptor(record: ImageRecord) -> np.ndarray:
    return hog_descriptors(record.pixels.reshape(1, 32, 32, 3))[0]


def extract_all(records: Sequence[ImageRecord]) -> list[FeatureViewSet]:
    if not records:
        raise DataError("extract_all: nonempty required")
    pixels, _, ids = records_to_arrays(records)
    views = extract_views(pixels)
    return [FeatureViewSet([v[i] for v in views], int(ids[i])) for i in range(len(ids))]


# Feature cache layout (little-endian):
#   magic b"MVFC" | u32 version | u32 M | u64 N | M x u32 dims
#   N x u64 ids | N rows of sum(dims) float32, views concatenated in order
FEATURE_MAGIC = b"MVFC"
FEATURE_VERSION = 1


def save_features(path: str | Path, views: Sequence[np.ndarray], ids: np.ndarray) -> None:
    ids = np.asarray(ids, dtype="<u8")
    dims = [v.shape[1] for v in views]
    if any(len(v) != len(ids) for v in views):
        raise DataError("every view needs one row per id")
    header = FEATURE_MAGIC + struct.pack("<IIQ", FEATURE_VERSION, len(views), len(ids))
    header += struct.pack(f"<{len(dims)}I", *dims)
    payload = np.concatenate(views, axis=1).astype("<f4") if len(ids) else np.zeros((0, sum(dims)), "<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ids.tobytes())
        fh.write(np.ascontiguousarray(payload).tobytes())


def load_features(path: str | Path) -> tuple[list[np.ndarray], np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature cache file")
    version, m, n = struct.unpack_from("<IIQ", buf, 4)
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature cache version {version}")
    off = 4 + 16
    dims = struct.unpack_from(f"<{m}I", buf, off)
    off += 4 * m
    ids = np.frombuffer(buf, dtype="<u8", count=n, offset=off).astype(np.int64)
    off += 8 * n
    data = np.frombuffer(buf, dtype="<f4", count=n * sum(dims), offset=off).reshape(n, sum(dims))
    splits = np.cumsum(dims)[:-1]
    return [v.astype(np.float64) for v in np.split(data, splits, axis=1)], ids
