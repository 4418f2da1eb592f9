"""Datasets: synthetic blobs, the binary image format, batching, glyphs."""

import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from sparsetrain.data import (DatasetHandle, batches, dataset_from_config,
                              ensure_smallimg, load_idx_dataset, num_batches,
                              read_idx_images, read_idx_labels, render_glyphs,
                              synth_blobs, write_idx_images, write_idx_labels)
from sparsetrain.errors import ConfigError, DataFormatError, ParameterError

from tests.conftest import BLOBS_DATA_PARAMS


# ---------------------------------------------------------------------------
# synthetic blobs
# ---------------------------------------------------------------------------

def test_blobs_deterministic_and_split_properly():
    a = synth_blobs(**BLOBS_DATA_PARAMS)
    b = synth_blobs(**BLOBS_DATA_PARAMS)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.train_idx, b.train_idx)
    n = a.features.shape[0]
    assert n == 1000
    combined = np.concatenate([a.train_idx, a.eval_idx])
    assert len(combined) == n
    assert len(np.unique(combined)) == n  # disjoint and covering


def test_blobs_shapes_and_provenance():
    handle = synth_blobs(classes=3, dims=4, n_per_class=10, separation=2.5, seed=9)
    assert handle.features.shape == (30, 4)
    assert handle.features.dtype == np.float64
    assert handle.classes == 3
    assert set(np.unique(handle.labels)) == {0, 1, 2}
    assert handle.input_shape == (4,)
    for token in ("blobs", "classes=3", "dims=4", "seed=9"):
        assert token in handle.provenance


def test_blobs_single_point_per_class():
    handle = synth_blobs(classes=5, dims=2, n_per_class=1, separation=1.0, seed=0)
    assert handle.features.shape[0] == 5


def test_blobs_parameter_validation():
    with pytest.raises(ParameterError):
        synth_blobs(classes=1, dims=2, n_per_class=5, separation=1.0, seed=0)
    with pytest.raises(ParameterError):
        synth_blobs(classes=2, dims=0, n_per_class=5, separation=1.0, seed=0)
    with pytest.raises(ParameterError):
        synth_blobs(classes=2, dims=2, n_per_class=0, separation=1.0, seed=0)


def test_well_separated_blobs_are_linearly_separable():
    handle = synth_blobs(classes=3, dims=2, n_per_class=200, separation=10.0, seed=3)
    x_tr, y_tr = handle.train_arrays()
    x_ev, y_ev = handle.eval_arrays()
    clf = LogisticRegression().fit(x_tr, y_tr)
    assert clf.score(x_ev, y_ev) >= 0.99


def test_eval_arrays_fall_back_to_train_when_split_empty():
    handle = DatasetHandle(
        features=np.zeros((4, 2)), labels=np.array([0, 1, 0, 1]),
        train_idx=np.arange(4), eval_idx=np.array([], dtype=np.int64),
        classes=2, provenance="test")
    x_ev, y_ev = handle.eval_arrays()
    assert x_ev.shape[0] == 4 and y_ev.shape[0] == 4


# ---------------------------------------------------------------------------
# binary image/label files
# ---------------------------------------------------------------------------

def test_image_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    images = rng.integers(0, 256, size=(7, 5, 6)).astype(np.uint8)
    path = tmp_path / "imgs.idx"
    write_idx_images(path, images)
    raw = path.read_bytes()
    magic, n, rows, cols = struct.unpack(">iiii", raw[:16])
    assert (magic, n, rows, cols) == (2051, 7, 5, 6)
    assert raw[16:] == images.tobytes()
    back = read_idx_images(path)
    assert back.shape == (7, 1, 5, 6)
    assert back.dtype == np.float64
    assert back.min() >= 0.0 and back.max() <= 1.0
    np.testing.assert_array_equal(np.round(back[:, 0] * 255).astype(np.uint8),
                                  images)


def test_label_file_round_trip(tmp_path):
    labels = np.array([3, 1, 4, 1, 5, 9], dtype=np.uint8)
    path = tmp_path / "labels.idx"
    write_idx_labels(path, labels)
    magic, n = struct.unpack(">ii", path.read_bytes()[:8])
    assert (magic, n) == (2049, 6)
    np.testing.assert_array_equal(read_idx_labels(path), labels)


def test_bad_image_magic_reports_offset(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">iiii", 1234, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(DataFormatError, match=r"magic.*1234.*2051.*byte offset 0"):
        read_idx_images(path)


def test_label_magic_on_image_file_rejected(tmp_path):
    path = tmp_path / "mixed.idx"
    path.write_bytes(struct.pack(">iiii", 2049, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(DataFormatError, match="2051"):
        read_idx_images(path)
    imgs = tmp_path / "imgs-as-labels.idx"
    imgs.write_bytes(struct.pack(">ii", 2051, 1) + b"\x00")
    with pytest.raises(DataFormatError, match="2049"):
        read_idx_labels(imgs)


def test_truncated_header_reports_offset(tmp_path):
    path = tmp_path / "short.idx"
    path.write_bytes(b"\x00\x00\x08")
    with pytest.raises(DataFormatError, match="byte offset 0"):
        read_idx_images(path)
    with pytest.raises(DataFormatError, match="truncated"):
        read_idx_labels(path)


def test_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "cut.idx"
    path.write_bytes(struct.pack(">iiii", 2051, 2, 3, 3) + b"\x00" * 10)
    with pytest.raises(DataFormatError, match="wanted 18 bytes at byte offset 16"):
        read_idx_images(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "extra.idx"
    path.write_bytes(struct.pack(">ii", 2049, 2) + b"\x00\x01\x02")
    with pytest.raises(DataFormatError, match="trailing bytes"):
        read_idx_labels(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.idx"
    path.write_bytes(b"")
    with pytest.raises(DataFormatError):
        read_idx_images(path)


def test_writer_validates_inputs(tmp_path):
    with pytest.raises(ParameterError):
        write_idx_images(tmp_path / "x.idx", np.zeros((2, 3), dtype=np.uint8))
    with pytest.raises(ParameterError):
        write_idx_images(tmp_path / "x.idx", np.zeros((2, 3, 3), dtype=np.float64))
    with pytest.raises(ParameterError):
        write_idx_labels(tmp_path / "y.idx", np.zeros((2, 2), dtype=np.uint8))


def test_load_idx_dataset_count_mismatch(tmp_path):
    images = np.zeros((3, 4, 4), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    write_idx_images(tmp_path / "i.idx", images)
    write_idx_labels(tmp_path / "l.idx", labels)
    with pytest.raises(DataFormatError, match="3.*2"):
        load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx",
                         tmp_path / "i.idx", tmp_path / "l.idx")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _integer_handle(n):
    features = np.arange(n, dtype=np.float64).reshape(n, 1)
    labels = (np.arange(n) % 2).astype(np.int64)
    return DatasetHandle(features=features, labels=labels,
                         train_idx=np.arange(n), eval_idx=np.array([], dtype=np.int64),
                         classes=2, provenance="seq")


def test_batches_cover_the_epoch_exactly_once():
    handle = _integer_handle(10)
    seen = []
    for xb, yb in batches(handle, batch_size=3, shuffle_seed=1):
        assert xb.shape[0] == yb.shape[0]
        seen.extend(xb[:, 0].astype(int).tolist())
    assert sorted(seen) == list(range(10))
    sizes = [xb.shape[0] for xb, _ in batches(handle, 3, shuffle_seed=1)]
    assert sizes == [3, 3, 3, 1]
    assert num_batches(handle, 3) == 4


def test_batches_are_seeded():
    handle = _integer_handle(12)
    order = lambda seed: [tuple(xb[:, 0]) for xb, _ in batches(handle, 4, seed)]
    assert order(5) == order(5)
    assert order(5) != order(6)


def test_single_full_batch():
    handle = _integer_handle(6)
    out = list(batches(handle, batch_size=6, shuffle_seed=0))
    assert len(out) == 1
    assert out[0][0].shape[0] == 6
    assert num_batches(handle, 6) == 1


def test_batch_size_validation():
    handle = _integer_handle(6)
    with pytest.raises(ParameterError):
        list(batches(handle, batch_size=0, shuffle_seed=0))


# ---------------------------------------------------------------------------
# glyph corpus
# ---------------------------------------------------------------------------

def test_render_glyphs_deterministic_and_balanced():
    imgs_a, labels_a = render_glyphs(200, side=16, seed=1, noise=0.3, max_shift=2)
    imgs_b, labels_b = render_glyphs(200, side=16, seed=1, noise=0.3, max_shift=2)
    np.testing.assert_array_equal(imgs_a, imgs_b)
    np.testing.assert_array_equal(labels_a, labels_b)
    assert imgs_a.shape == (200, 16, 16)
    assert imgs_a.dtype == np.uint8
    counts = np.bincount(labels_a, minlength=10)
    assert counts.min() >= 15  # near-balanced 10-class draw


def test_ensure_smallimg_writes_once_then_loads(tmp_path):
    first = ensure_smallimg(tmp_path, n_train=50, n_eval=20, side=16, seed=2,
                            noise=0.4, max_shift=1)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 4
    stamps = {p.name: (p.stat().st_mtime_ns, p.read_bytes()) for p in tmp_path.iterdir()}
    second = ensure_smallimg(tmp_path, n_train=50, n_eval=20, side=16, seed=2,
                             noise=0.4, max_shift=1)
    for p in tmp_path.iterdir():
        mtime, blob = stamps[p.name]
        assert p.stat().st_mtime_ns == mtime  # not rewritten
        assert p.read_bytes() == blob
    np.testing.assert_array_equal(first.features, second.features)
    assert first.n_train == 50 and first.n_eval == 20
    assert first.features.shape[1:] == (1, 16, 16)
    assert first.classes == 10


# ---------------------------------------------------------------------------
# config -> dataset factory
# ---------------------------------------------------------------------------

def test_dataset_from_config_blobs(tmp_path):
    params = {"classes": "2", "dims": "2", "n_per_class": "8",
              "separation": "4.0", "seed": "1"}
    handle = dataset_from_config("blobs", params, tmp_path)
    assert handle.features.shape == (16, 2)


def test_dataset_from_config_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match=r"data\.wobble: unknown key"):
        dataset_from_config("blobs", {"wobble": "3"}, tmp_path)


def test_dataset_from_config_unknown_name(tmp_path):
    with pytest.raises(ConfigError, match=r"run\.dataset"):
        dataset_from_config("nosuch", {}, tmp_path)


def test_dataset_from_config_bad_value_type(tmp_path):
    with pytest.raises(ConfigError, match=r"data\.classes"):
        dataset_from_config("blobs", {"classes": "two"}, tmp_path)


def test_dataset_from_config_idx_requires_paths(tmp_path):
    with pytest.raises(ConfigError, match="train_images"):
        dataset_from_config("idx", {}, tmp_path)
