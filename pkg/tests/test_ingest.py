import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvhash.errors import DataError
from mvhash.ingest import (
    DatasetSplit,
    ImageRecord,
    add_noise,
    encode_records,
    load_arrays,
    load_cifar10,
    make_split,
    read_batch_file,
    sample_pairs,
    write_cifar10,
)


def _record_bytes(label, r, g, b):
    return bytes([label]) + bytes(r) + bytes(g) + bytes(b)


def test_hand_built_two_record_file(tmp_path):
    # planes R, G, B, each 1024 bytes in row-major order
    r1, g1, b1 = [10] * 1024, [20] * 1024, [30] * 1024
    r2 = list(range(256)) * 4
    g2, b2 = [0] * 1024, [255] * 1024
    (tmp_path / "data_batch_1.bin").write_bytes(_record_bytes(3, r1, g1, b1) + _record_bytes(7, r2, g2, b2))
    recs = load_cifar10(tmp_path)
    assert [r.label for r in recs] == [3, 7]
    assert [r.id for r in recs] == [0, 1]
    assert recs[0].pixels.shape == (32, 32, 3)
    assert (recs[0].pixels[..., 0] == 10).all() and (recs[0].pixels[..., 2] == 30).all()
    # row-major: pixel (row 0, col 5) is plane byte 5; (row 1, col 0) is byte 32
    assert recs[1].pixels[0, 5, 0] == 5
    assert recs[1].pixels[1, 0, 0] == 32
    assert (recs[1].pixels[..., 2] == 255).all()


def test_empty_directory(tmp_path):
    with pytest.raises(DataError, match="no batch files found"):
        load_cifar10(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_cifar10(tmp_path / "nope")


def test_truncated_record(tmp_path):
    (tmp_path / "data_batch_1.bin").write_bytes(bytes(3073 + 10))
    with pytest.raises(DataError, match="truncated"):
        read_batch_file(tmp_path / "data_batch_1.bin")


def test_bad_label(tmp_path):
    (tmp_path / "data_batch_1.bin").write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(DataError):
        load_cifar10(tmp_path)


def test_file_order_data_batches_then_test(tmp_path, rng):
    px = rng.integers(0, 256, (5, 32, 32, 3), dtype=np.uint8)
    (tmp_path / "test_batch.bin").write_bytes(encode_records(px[4:], np.array([9])))
    (tmp_path / "data_batch_2.bin").write_bytes(encode_records(px[2:4], np.array([2, 3])))
    (tmp_path / "data_batch_1.bin").write_bytes(encode_records(px[:2], np.array([0, 1])))
    pixels, labels = load_arrays(tmp_path)
    assert labels.tolist() == [0, 1, 2, 3, 9]
    assert np.array_equal(pixels, px)


def test_round_trip_bytes(tmp_path, rng):
    px = rng.integers(0, 256, (25, 32, 32, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, 25)
    paths = write_cifar10(tmp_path, px, labels, per_file=10)
    assert [p.name for p in paths] == ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin"]
    original = b"".join(p.read_bytes() for p in paths)
    pixels2, labels2 = load_arrays(tmp_path)
    assert encode_records(pixels2, labels2) == original
    assert np.array_equal(labels2, labels)


def test_image_record_validation():
    with pytest.raises(DataError):
        ImageRecord(np.zeros((32, 32, 2), np.uint8), 0, 0)
    with pytest.raises(DataError):
        ImageRecord(np.zeros((32, 32, 3), np.uint8), 10, 0)


# --------------------------------------------------------------------- splits

LABELS_60K = np.repeat(np.arange(10), 6000)


def test_split_partition_sizes():
    s = make_split(LABELS_60K, 5000, 1000, seed=1)
    assert (len(s.train), len(s.query), len(s.gallery)) == (5000, 1000, 54000)
    assert len(np.intersect1d(s.train, s.query)) == 0
    assert len(np.intersect1d(s.train, s.gallery)) == 0
    assert len(np.intersect1d(s.query, s.gallery)) == 0
    assert np.bincount(LABELS_60K[s.train]).tolist() == [500] * 10


def test_split_deterministic():
    a = make_split(LABELS_60K, 5000, 1000, seed=1)
    b = make_split(LABELS_60K, 5000, 1000, seed=1)
    assert a.to_json() == b.to_json()
    c = make_split(LABELS_60K, 5000, 1000, seed=2)
    assert a.to_json() != c.to_json()


def test_split_too_large():
    with pytest.raises(DataError):
        make_split(LABELS_60K, 60001, 0, seed=1)


def test_split_remainder_goes_to_low_classes():
    s = make_split(LABELS_60K, 13, 0, seed=0)
    assert np.bincount(LABELS_60K[s.train], minlength=10).tolist() == [2, 2, 2] + [1] * 7


def test_split_gallery_flag_and_manifest(tmp_path):
    s = make_split(LABELS_60K[:1000], 100, 50, seed=4, n_gallery=900, gallery_includes_train=True)
    assert len(np.intersect1d(s.query, s.gallery)) == 0
    assert len(np.intersect1d(s.train, s.gallery)) > 0
    s.save(tmp_path / "split.json")
    doc = json.loads((tmp_path / "split.json").read_text())
    assert doc["gallery_includes_train"] is True and doc["seed"] == 4
    back = DatasetSplit.load(tmp_path / "split.json")
    assert np.array_equal(back.gallery, s.gallery)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 200), st.integers(0, 200), st.integers(0, 2**32 - 1))
def test_split_is_partition(n_train, n_query, seed):
    labels = np.repeat(np.arange(10), 40)
    s = make_split(labels, n_train, n_query, seed)
    allids = np.concatenate([s.train, s.query, s.gallery])
    assert len(allids) == len(np.unique(allids)) == 400


# ---------------------------------------------------------------------- pairs


def test_pairs_fraction():
    labels = np.repeat(np.arange(10), 20)
    p = sample_pairs(np.arange(200), labels, 8, 0.5, seed=3)
    assert (p.y == 1).sum() == 4 and (p.y == -1).sum() == 4


def test_pairs_all_negative():
    labels = np.repeat(np.arange(10), 20)
    p = sample_pairs(np.arange(200), labels, 50, 0.0, seed=3)
    assert (p.y == -1).all()


def test_pairs_deterministic():
    labels = np.repeat(np.arange(10), 20)
    a = list(sample_pairs(np.arange(200), labels, 64, 0.5, seed=9))
    b = list(sample_pairs(np.arange(200), labels, 64, 0.5, seed=9))
    assert a == b


def test_pairs_singleton_class_rejected():
    labels = np.array([0, 0, 1])
    with pytest.raises(DataError):
        sample_pairs(np.arange(3), labels, 200, 1.0, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.floats(0, 1), st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_pair_label_invariant(batch, frac, seed, n_classes):
    labels = np.repeat(np.arange(n_classes), 7)
    ids = np.arange(len(labels))
    p = sample_pairs(ids, labels, batch, frac, seed)
    assert len(p) == batch
    assert (p.first != p.second).all()
    assert np.array_equal(p.y == 1, labels[p.first] == labels[p.second])


# ---------------------------------------------------------------------- noise


def test_noise_zero_sigma_identity(rng):
    rec = ImageRecord(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8), 1, 5)
    out = add_noise(rec, 0.0, seed=1)
    assert np.array_equal(out.pixels, rec.pixels) and out.pixels is not rec.pixels


def test_noise_deterministic_and_input_untouched(rng):
    px = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    rec = ImageRecord(px.copy(), 1, 5)
    a, b = add_noise(rec, 5.0, seed=7), add_noise(rec, 5.0, seed=7)
    assert np.array_equal(a.pixels, b.pixels)
    assert np.array_equal(rec.pixels, px)
    assert not np.array_equal(a.pixels, px)


def test_noise_clamps_at_zero():
    rec = ImageRecord(np.zeros((32, 32, 3), np.uint8), 0, 0)
    out = add_noise(rec, 5.0, seed=2)
    assert out.pixels.dtype == np.uint8 and out.pixels.min() >= 0 and out.pixels.max() > 0
