import gzip
import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bihalf.data import (CIFAR_RECORD, FormatError, LabeledDataset, LengthError, dump_idx,
                         iterate_batches, load_cifar10_bin, load_dataset, load_idx,
                         make_blobs, parse_cifar10_bin, parse_idx, save_idx)
from bihalf.tensor import make_rng


def _idx_header(magic, *dims):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims)


class TestIdx:
    def test_images_header(self, tmp_path):
        imgs = np.arange(3 * 28 * 28, dtype=np.uint8).reshape(3, 28, 28)
        save_idx(tmp_path / "img", imgs)
        raw = (tmp_path / "img").read_bytes()
        assert struct.unpack(">I", raw[:4])[0] == 2051
        assert struct.unpack(">3I", raw[4:16]) == (3, 28, 28)
        np.testing.assert_array_equal(load_idx(tmp_path / "img"), imgs)

    def test_labels_magic(self):
        raw = dump_idx(np.array([7, 2, 1], dtype=np.uint8))
        assert struct.unpack(">I", raw[:4])[0] == 2049
        np.testing.assert_array_equal(parse_idx(raw), [7, 2, 1])

    def test_hand_built_file(self):
        buf = _idx_header(0x803, 2, 2, 2) + bytes(range(8))
        np.testing.assert_array_equal(parse_idx(buf), np.arange(8).reshape(2, 2, 2))

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            parse_idx(_idx_header(0xDEADBEEF, 1) + b"\x00")

    def test_truncated(self):
        with pytest.raises(LengthError):
            parse_idx(_idx_header(0x803, 2, 2, 2) + bytes(7))
        with pytest.raises(LengthError):
            parse_idx(b"\x00\x00")

    def test_gzip(self, tmp_path):
        arr = np.arange(6, dtype=np.uint8).reshape(2, 3)
        with gzip.open(tmp_path / "a.gz", "wb") as fh:
            fh.write(dump_idx(arr))
        np.testing.assert_array_equal(load_idx(tmp_path / "a.gz"), arr)

    @settings(max_examples=50)
    @given(arrays(st.sampled_from([np.uint8, np.int16, np.int32, np.float32, np.float64]),
                  st.lists(st.integers(1, 5), min_size=1, max_size=3).map(tuple)))
    def test_round_trip_is_byte_exact(self, arr):
        raw = dump_idx(arr)
        assert dump_idx(parse_idx(raw)) == raw


class TestCifar:
    def _records(self, labels):
        out = b""
        for i, l in enumerate(labels):
            out += bytes([l]) + bytes([(i + j) % 256 for j in range(3072)])
        return out

    def test_records(self):
        ds = parse_cifar10_bin(self._records([3, 9]))
        assert len(ds) == 2 and ds.sample_shape == (3, 32, 32)
        np.testing.assert_array_equal(ds.labels, [3, 9])
        # channel-planar: the first plane is the first 1024 pixel bytes
        assert ds.images[1, 0, 0, 0] == 1 and ds.images[1, 1, 0, 0] == (1 + 1024) % 256

    def test_full_batch_size(self):
        assert 10000 * CIFAR_RECORD == 30_730_000

    def test_bad_length(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(bytes(3074))
        with pytest.raises(LengthError):
            load_cifar10_bin(tmp_path / "b.bin")

    def test_bad_label(self):
        with pytest.raises(FormatError):
            parse_cifar10_bin(self._records([10]))

    def test_empty(self, caplog):
        with caplog.at_level(logging.WARNING):
            ds = parse_cifar10_bin(b"")
        assert len(ds) == 0
        assert "empty" in caplog.text


class TestBlobs:
    def test_balanced(self):
        for n, k in ((101, 2), (100, 3), (7, 7)):
            counts = np.bincount(make_blobs(n, k).labels, minlength=k)
            assert counts.max() - counts.min() <= 1

    def test_deterministic(self):
        a, b = make_blobs(50, 3, rng=make_rng(4)), make_blobs(50, 3, rng=make_rng(4))
        np.testing.assert_array_equal(a.images, b.images)

    def test_separable(self):
        ds = make_blobs(400, 2, separation=10.0)
        x = ds.images
        # centres at (+10, 0) and (-10, 0); the x1 = 0 line separates with margin
        assert ((x[:, 0] > 0) == (ds.labels == 0)).all()
        assert np.abs(x[:, 0]).min() > 2.0

    def test_needs_one_per_class(self):
        with pytest.raises(ValueError):
            make_blobs(2, 3)


class TestDataset:
    def test_label_range(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 1)), np.array([0, 5]), 3)

    def test_normalisation(self):
        ds = LabeledDataset(np.full((2, 1, 2, 2), 255, dtype=np.uint8), np.array([0, 1]), 2,
                            (0.5,), (0.25,))
        np.testing.assert_allclose(ds.features(), 2.0)

    def test_batches_deterministic_and_complete(self):
        ds = make_blobs(103, 2)
        a = [y for _, y in iterate_batches(ds, 10, make_rng(1))]
        b = [y for _, y in iterate_batches(ds, 10, make_rng(1))]
        assert all((p == q).all() for p, q in zip(a, b))
        assert sum(len(y) for y in a) == 103

    def test_singleton_tail_dropped(self):
        ds = make_blobs(21, 2)
        assert [len(y) for _, y in iterate_batches(ds, 10, None)] == [10, 10]

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            load_dataset("imagenet")

    def test_mnist_from_idx_dir(self, tmp_path):
        rng = make_rng(0)
        for split, n in (("train", 12), ("t10k", 6)):
            save_idx(tmp_path / f"{split}-images-idx3-ubyte",
                     rng.integers(0, 256, (n, 28, 28)).astype(np.uint8))
            save_idx(tmp_path / f"{split}-labels-idx1-ubyte", (np.arange(n) % 10).astype(np.uint8))
        tr, te = load_dataset("mnist-subset", tmp_path, n_train=10)
        assert len(tr) == 10 and len(te) == 6 and tr.sample_shape == (1, 28, 28)
