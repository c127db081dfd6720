import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hopmix.data import (
    BadMagic,
    Dataset,
    LabelOutOfRange,
    Malformed,
    Truncated,
    class_templates,
    gen_synthetic,
    load_dataset,
    save_dataset,
)
from oracles import nearest_centroid_accuracy


@given(st.integers(0, 5), st.integers(1, 3), st.integers(1, 5), st.integers(2, 9), st.integers(0, 999))
def test_round_trip(n, c, hw, k, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.integers(0, 256, (n, c, hw, hw), dtype=np.uint8), rng.integers(0, k, n), k)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.imgb"
        save_dataset(ds, path)
        back = load_dataset(path)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.num_classes == k


def test_header_layout(tmp_path):
    ds = Dataset(np.arange(12, dtype=np.uint8).reshape(2, 1, 2, 3), np.array([1, 0]), 4)
    save_dataset(ds, tmp_path / "a.imgb")
    raw = (tmp_path / "a.imgb").read_bytes()
    assert raw[:4] == b"IMGB"
    assert struct.unpack_from("<IIHHHH", raw, 4) == (1, 2, 1, 2, 3, 4)
    assert raw[20:32] == bytes(range(12))
    assert raw[32:] == bytes([1, 0])


def _write(tmp_path, raw):
    p = tmp_path / "bad.imgb"
    p.write_bytes(raw)
    return p


def test_errors(tmp_path):
    good = struct.pack("<4sIIHHHH", b"IMGB", 1, 1, 1, 1, 1, 2) + bytes([7, 1])
    assert len(load_dataset(_write(tmp_path, good))) == 1
    with pytest.raises(BadMagic):
        load_dataset(_write(tmp_path, b"PNG!" + good[4:]))
    with pytest.raises(Truncated):
        load_dataset(_write(tmp_path, good[:10]))
    with pytest.raises(Truncated):
        load_dataset(_write(tmp_path, good[:-1]))
    with pytest.raises(Malformed):
        load_dataset(_write(tmp_path, good + b"\0"))
    with pytest.raises(Malformed):
        load_dataset(_write(tmp_path, good[:4] + struct.pack("<I", 2) + good[8:]))
    with pytest.raises(LabelOutOfRange):
        load_dataset(_write(tmp_path, good[:-1] + bytes([2])))
    with pytest.raises(LabelOutOfRange):
        Dataset(np.zeros((1, 1, 1, 1)), [5], 3)


def test_generator_is_deterministic_and_shares_templates():
    a = gen_synthetic(4, 5, (1, 6, 6), 0.1, seed=3)
    b = gen_synthetic(4, 5, (1, 6, 6), 0.1, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    val = gen_synthetic(4, 5, (1, 6, 6), 0.1, seed=3, split="val")
    assert not np.array_equal(a.images, val.images)
    assert np.bincount(a.labels).tolist() == [5] * 4


def test_zero_noise_reproduces_templates():
    ds = gen_synthetic(3, 2, (2, 4, 4), 0.0, seed=1)
    t = class_templates(3, (2, 4, 4), 1)
    np.testing.assert_array_equal(ds.images, np.rint(t[ds.labels] * 255).astype(np.uint8))


@pytest.mark.parametrize("noise,floor", [(0.0, 1.0), (0.1, 0.99)])
def test_classes_are_separable(noise, floor):
    tr = gen_synthetic(10, 20, (1, 16, 16), noise, seed=0)
    va = gen_synthetic(10, 20, (1, 16, 16), noise, seed=0, split="val")
    acc = nearest_centroid_accuracy(tr.images.astype(float), tr.labels, va.images.astype(float), va.labels)
    assert acc >= floor


def test_normalization_stats():
    ds = Dataset(np.array([[[[0]], [[255]]], [[[255]], [[255]]]], np.uint8), [0, 1], 2)
    m, s = ds.normalization_stats()
    np.testing.assert_allclose(m, [0.5, 1.0])
    np.testing.assert_allclose(s, [0.5, 1.0])  # a constant channel keeps std 1


def test_generator_argument_checks():
    with pytest.raises(ValueError):
        gen_synthetic(1, 2)
    with pytest.raises(ValueError):
        gen_synthetic(300, 1)
