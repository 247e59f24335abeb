import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qahm_lab.data import (Dataset, IdxCountMismatchError, IdxMagicError, IdxTruncatedError, RawMnist,
                           bars_and_stripes, grid_line_edges, load_mnist_idx, parse_idx, preprocess_mnist,
                           rescale_pixels, resize_bilinear, sample_bars_and_stripes, sample_ground_truth, write_idx)
from qahm_lab.ising import IsingModel, ModelSizeError, enumerate_distribution, exact_moments, random_model
from qahm_lab.samplers import moments_of


def _idx_bytes(magic, dims, payload):
    return struct.pack(f">I{len(dims)}I", magic, *dims) + bytes(payload)


# --- IDX --------------------------------------------------------------------------

def test_parse_hand_built_header():
    arr = parse_idx(_idx_bytes(2051, (2, 2, 3), range(12)), 2051)
    assert arr.shape == (2, 2, 3) and arr.dtype == np.uint8
    assert arr[1, 0].tolist() == [6, 7, 8]


def test_parse_wrong_magic():
    with pytest.raises(IdxMagicError):
        parse_idx(_idx_bytes(2049, (3,), [1, 2, 3]), 2051)


def test_parse_truncated_payload():
    with pytest.raises(IdxTruncatedError):
        parse_idx(_idx_bytes(2049, (5,), [1, 2, 3]), 2049)
    with pytest.raises(IdxTruncatedError):
        parse_idx(b"\x00\x00", 2049)


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_write_load_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (5, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, 5).astype(np.uint8)
    raw = load_mnist_idx(write_idx(tmp_path / f"img{suffix}", images), write_idx(tmp_path / f"lab{suffix}", labels))
    assert np.array_equal(raw.images, images) and np.array_equal(raw.labels, labels)


def test_written_header_is_big_endian(tmp_path):
    p = write_idx(tmp_path / "x", np.zeros((3, 2, 2), np.uint8))
    assert p.read_bytes()[:16] == struct.pack(">IIII", 2051, 3, 2, 2)


def test_count_mismatch(tmp_path):
    img = write_idx(tmp_path / "img", np.zeros((3, 28, 28), np.uint8))
    lab = write_idx(tmp_path / "lab", np.zeros(4, np.uint8))
    with pytest.raises(IdxCountMismatchError):
        load_mnist_idx(img, lab)


def test_fixture_files_parse(mnist_files):
    raw = load_mnist_idx(*mnist_files)
    assert raw.images.shape[1:] == (28, 28)
    assert set(np.unique(raw.labels[:1000])) == set(range(10))


@pytest.mark.skipif(not os.environ.get("QAHM_MNIST_DIR"), reason="full MNIST training files not provided")
def test_full_training_set_size(mnist_files):
    assert len(load_mnist_idx(*mnist_files)) == 60000


# --- preprocessing -----------------------------------------------------------------

def test_rescale_endpoints_and_midpoint():
    assert rescale_pixels([0, 255]).tolist() == [-1.0, 1.0]
    assert rescale_pixels(128) == pytest.approx(0.003922, abs=1e-6)


@pytest.mark.parametrize("value", [0, 128, 255, 17])
def test_constant_image_stays_constant(value):
    raw = RawMnist(np.full((1, 28, 28), value, np.uint8), np.array([3], np.uint8))
    ds = preprocess_mnist(raw)
    assert ds.items.shape == (1, 266)
    assert np.all(ds.items[0, :256] == rescale_pixels(value))
    assert ds.items[0, 256:].tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert ds.labels.tolist() == [3]


def test_bilinear_halving_averages_blocks():
    img = np.arange(16, dtype=float).reshape(4, 4)
    out = resize_bilinear(img, 2, 2)
    ref = img.reshape(2, 2, 2, 2).mean(axis=(1, 3))
    assert np.allclose(out, ref, atol=1e-12)


def test_bilinear_identity_at_same_size():
    img = np.random.default_rng(1).random((5, 7))
    assert np.allclose(resize_bilinear(img, 5, 7), img, atol=1e-15)


@given(arrays(np.uint8, (28, 28)))
@settings(max_examples=30, deadline=None)
def test_preprocessed_pixels_in_range(img):
    ds = preprocess_mnist(RawMnist(img[None], np.array([0], np.uint8)))
    px = ds.items[0, :256]
    assert px.min() >= -1 and px.max() <= 1
    assert px.min() >= rescale_pixels(img.min()) - 1e-12 and px.max() <= rescale_pixels(img.max()) + 1e-12


def test_preprocess_rejects_already_mapped_values():
    with pytest.raises(ValueError):
        preprocess_mnist(RawMnist(np.zeros((1, 28, 28)), np.zeros(1, np.uint8)))


def test_preprocess_fixture_subset(mnist_files):
    ds = preprocess_mnist(load_mnist_idx(*mnist_files).head(50))
    assert ds.items.shape == (50, 266) and ds.n_continuous == 256
    assert np.all(ds.items[:, 256:].sum(axis=1) == 1)
    assert ds.metadata["preprocessed"] is True


# --- bars and stripes ----------------------------------------------------------------

@pytest.mark.parametrize("shape,count", [((4, 4), 30), ((2, 2), 6), ((1, 1), 2), ((3, 2), 10)])
def test_bars_and_stripes_counts(shape, count):
    ds = bars_and_stripes(*shape)
    assert len(ds) == count
    assert len({tuple(r) for r in ds.items}) == count


def test_bars_and_stripes_patterns_are_bars_or_stripes():
    for img in bars_and_stripes(3, 4).items.reshape(-1, 3, 4):
        rows_const = np.all(img == img[:, :1], axis=1).all()
        cols_const = np.all(img == img[:1, :], axis=0).all()
        assert rows_const or cols_const


def test_bars_and_stripes_rejects_empty():
    with pytest.raises(ValueError):
        bars_and_stripes(0, 3)


def test_sample_bars_and_stripes():
    a = sample_bars_and_stripes(4, 4, 500, 2)
    b = sample_bars_and_stripes(4, 4, 500, 2)
    assert np.array_equal(a.items, b.items)
    valid = {tuple(r) for r in bars_and_stripes(4, 4).items}
    assert all(tuple(r) in valid for r in a.items)
    assert len({tuple(r) for r in a.items}) == 30


def test_grid_line_edges():
    e = grid_line_edges(4, 4)
    assert len(e) == 48
    assert [0, 3] in e.tolist() and [0, 12] in e.tolist() and [0, 5] not in e.tolist()


# --- ground truth ---------------------------------------------------------------------

def test_ground_truth_uniform_means():
    n = 20_000
    ds = sample_ground_truth(IsingModel.zeros(6), 1.0, n, 0)
    assert ds.spin and np.all(np.abs(ds.items.mean(axis=0)) <= 3 / np.sqrt(n))


def test_ground_truth_moments():
    m = random_model(8, 2, 0.5, 0.5)
    ds = sample_ground_truth(m, 1.0, 100_000, 1)
    ref = exact_moments(enumerate_distribution(m), m)
    assert moments_of(ds.items, m.edges).max_abs_diff(ref) <= 0.02


def test_ground_truth_determinism_and_cap():
    m = random_model(5, 0)
    assert np.array_equal(sample_ground_truth(m, 1.0, 100, 3).items, sample_ground_truth(m, 1.0, 100, 3).items)
    with pytest.raises(ModelSizeError):
        sample_ground_truth(IsingModel.zeros(25), 1.0, 10, 0)


# --- dataset container -----------------------------------------------------------------

def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.array([[0.5, 2.0]]), n_continuous=2)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.5, 0.5]]), n_continuous=1)
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0, 0.0]]), spin=True)
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0]]), labels=[1, 2])
    with pytest.raises(ValueError):
        Dataset(np.zeros(3))


def test_dataset_text_round_trip():
    ds = Dataset(np.array([[-0.25, 1.0, 0.0], [0.5, 0.0, 1.0]]), labels=[4, 7], n_continuous=1,
                 metadata={"provenance": "unit"})
    back = Dataset.from_text(ds.to_text())
    assert np.array_equal(back.items, ds.items) and back.labels.tolist() == [4, 7]
    assert back.n_continuous == 1 and back.metadata["provenance"] == "unit"


def test_dataset_subset_keeps_labels():
    ds = Dataset(np.eye(3), labels=[0, 1, 2])
    sub = ds.head(2)
    assert len(sub) == 2 and sub.labels.tolist() == [0, 1]
