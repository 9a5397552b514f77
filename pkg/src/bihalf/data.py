"""Dataset readers (IDX, CIFAR-10 binary) and small synthetic/bundled sets."""

from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from .tensor import DTYPE, make_rng

log = logging.getLogger(__name__)

DATA_DIR_ENV = "BIHALF_DATA_DIR"
DATASETS = ("mnist-subset", "cifar10-subset", "digits", "blobs")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}

CIFAR_RECORD = 1 + 3 * 32 * 32

# conventional normalisation constants (not tuned)
MNIST_STATS = ((0.1307,), (0.3081,))
CIFAR10_STATS = ((0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616))


class FormatError(ValueError):
    pass


class LengthError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Raw payload plus labels; normalisation is applied by :meth:`features`."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    mean: Tuple[float, ...] = (0.0,)
    std: Tuple[float, ...] = (1.0,)
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and int(self.labels.max()) >= self.n_classes:
            raise ValueError("label outside class range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def features(self, idx=slice(None)) -> np.ndarray:
        x = self.images[idx].astype(DTYPE)
        if self.images.dtype == np.uint8:
            x /= 255.0
        if x.ndim == 4:
            shape = (1, -1, 1, 1)
        else:
            shape = (1, -1)
        mean = np.asarray(self.mean, dtype=DTYPE)
        std = np.asarray(self.std, dtype=DTYPE)
        if mean.size == 1 or mean.size == x.shape[1]:
            x = (x - mean.reshape(shape)) / std.reshape(shape)
        return x

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.n_classes,
                              self.mean, self.std, self.name)


def iterate_batches(ds: LabeledDataset, batch_size: int, rng: Optional[np.random.Generator],
                    augment: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(x, y)`` batches; shuffled iff ``rng`` is given.

    A trailing batch with a single sample is dropped, BatchNorm needs two.
    """
    n = len(ds)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) < 2:
            break
        x = ds.features(idx)
        if augment and x.ndim == 4:
            x = _crop_flip(x, rng if rng is not None else make_rng(0))
        yield x, ds.labels[idx]


def _crop_flip(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(x)
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    for i in range(n):
        dy, dx = offs[i]
        img = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = img[:, :, ::-1] if flips[i] else img
    return out


# -- IDX --------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise LengthError("IDX header truncated")
    magic = struct.unpack(">I", buf[:4])[0]
    dtype_code, ndim = (magic >> 8) & 0xFF, magic & 0xFF
    if magic >> 16 != 0 or dtype_code not in _IDX_TYPES or ndim == 0:
        raise FormatError(f"bad IDX magic 0x{magic:08X}")
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise LengthError("IDX dimension header truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    dt = np.dtype(_IDX_TYPES[dtype_code])
    need = int(np.prod(dims)) * dt.itemsize
    if len(buf) - head != need:
        raise LengthError(f"IDX payload is {len(buf) - head} bytes, header implies {need}")
    arr = np.frombuffer(buf, dtype=dt, offset=head).reshape(dims)
    return arr.astype(dt.newbyteorder("="))


def load_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an array."""
    with _open(path) as fh:
        return parse_idx(fh.read())


def dump_idx(arr: np.ndarray) -> bytes:
    """Serialise an array to IDX bytes (inverse of :func:`parse_idx`)."""
    arr = np.asarray(arr)
    for code, name in _IDX_TYPES.items():
        if np.dtype(name).newbyteorder("=") == arr.dtype:
            break
    else:
        raise FormatError(f"dtype {arr.dtype} has no IDX type code")
    header = struct.pack(">I", (code << 8) | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(_IDX_TYPES[code]).tobytes()


def save_idx(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dump_idx(arr))


# -- CIFAR-10 binary ----------------------------------------------------------

def parse_cifar10_bin(buf: bytes) -> LabeledDataset:
    if len(buf) % CIFAR_RECORD:
        raise LengthError(f"{len(buf)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    if not buf:
        log.warning("empty CIFAR-10 batch file")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if (labels > 9).any():
        raise FormatError("CIFAR-10 label byte above 9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).copy()
    return LabeledDataset(images, labels, 10, *CIFAR10_STATS, name="cifar10")


def load_cifar10_bin(path) -> LabeledDataset:
    return parse_cifar10_bin(Path(path).read_bytes())


# -- synthetic / bundled ------------------------------------------------------

def make_blobs(n: int, classes: int = 2, separation: float = 10.0,
               rng: Optional[np.random.Generator] = None, noise: float = 1.0) -> LabeledDataset:
    """Unit-variance Gaussian clusters centred on a circle of radius ``separation``.

    Labels are assigned round-robin, so class counts differ by at most one.
    """
    if n < classes:
        raise ValueError("need at least one sample per class")
    rng = rng if rng is not None else make_rng(0)
    labels = np.arange(n) % classes
    angles = 2 * np.pi * np.arange(classes) / classes
    centres = separation * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x = centres[labels] + noise * rng.standard_normal((n, 2))
    return LabeledDataset(x.astype(DTYPE), labels.astype(np.int64), classes, name="blobs")


def load_digits_split(n_test: int = 497) -> Tuple[LabeledDataset, LabeledDataset]:
    """scikit-learn's bundled 8x8 handwritten digits, fixed train/test split."""
    from sklearn.datasets import load_digits

    d = load_digits()
    images = np.round(d.images * (255.0 / 16.0)).astype(np.uint8)[:, None]
    labels = d.target.astype(np.int64)
    perm = make_rng(0).permutation(len(labels))
    tr, te = perm[n_test:], perm[:n_test]
    x = images[tr] / 255.0
    stats = ((float(x.mean()),), (float(x.std()),))
    return (LabeledDataset(images[tr], labels[tr], 10, *stats, name="digits"),
            LabeledDataset(images[te], labels[te], 10, *stats, name="digits"))


def load_bundled_mnist(n_test: int = 1000) -> Tuple[LabeledDataset, LabeledDataset]:
    """The 5000-image MNIST sample shipped with mlxtend, split train/test.

    Used for ``mnist-subset`` when no IDX files are on disk.
    """
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    images = X.astype(np.uint8).reshape(-1, 1, 28, 28)
    labels = y.astype(np.int64)
    perm = make_rng(0).permutation(len(labels))
    tr, te = perm[n_test:], perm[:n_test]
    return (LabeledDataset(images[tr], labels[tr], 10, *MNIST_STATS, name="mnist-bundled"),
            LabeledDataset(images[te], labels[te], 10, *MNIST_STATS, name="mnist-bundled"))


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def _find(root: Path, *names: str) -> Optional[Path]:
    for name in names:
        for cand in (root / name, root / (name + ".gz")):
            if cand.exists():
                return cand
    return None


def mnist_available(data_dir=None) -> bool:
    root = Path(data_dir) if data_dir else default_data_dir()
    return _find(root, "train-images-idx3-ubyte", "train-images.idx3-ubyte") is not None


def load_dataset(name: str, data_dir=None, seed: int = 0, n_train: int = 5000,
                 n_test: int = 1000) -> Tuple[LabeledDataset, LabeledDataset]:
    """Resolve a dataset name to ``(train, test)``.

    ``mnist-subset`` and ``cifar10-subset`` read files from ``data_dir`` (or
    ``$BIHALF_DATA_DIR``) and keep the first ``n_train``/``n_test`` records.
    Without IDX files, ``mnist-subset`` falls back to :func:`load_bundled_mnist`.
    """
    root = Path(data_dir) if data_dir else default_data_dir()
    if name == "mnist-subset":
        paths = [_find(root, f"{s}-images-idx3-ubyte", f"{s}-images.idx3-ubyte") for s in ("train", "t10k")]
        lpaths = [_find(root, f"{s}-labels-idx1-ubyte", f"{s}-labels.idx1-ubyte") for s in ("train", "t10k")]
        if None in paths or None in lpaths:
            log.info("no MNIST IDX files under %s; using the bundled 5000-image sample", root)
            return load_bundled_mnist()
        out = []
        for ip, lp, cap in zip(paths, lpaths, (n_train, n_test)):
            imgs, labs = load_idx(ip), load_idx(lp)
            if len(imgs) != len(labs):
                raise LengthError("MNIST image and label counts differ")
            out.append(LabeledDataset(imgs[:cap, None].copy(), labs[:cap].astype(np.int64), 10,
                                      *MNIST_STATS, name="mnist"))
        return out[0], out[1]
    if name == "cifar10-subset":
        tr = load_cifar10_bin(_find(root, "data_batch_1.bin") or root / "data_batch_1.bin")
        te = load_cifar10_bin(_find(root, "test_batch.bin") or root / "test_batch.bin")
        return tr.subset(slice(0, n_train)), te.subset(slice(0, n_test))
    if name == "digits":
        return load_digits_split()
    if name == "blobs":
        rng = make_rng(seed)
        return make_blobs(400, 2, 3.0, rng), make_blobs(200, 2, 3.0, rng)
    raise ValueError(f"unknown dataset {name!r}; choose from {DATASETS}")
