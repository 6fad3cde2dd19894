"""Dataset ingestion: IDX image/label files, labeled CSV, and a seeded
synthetic Gaussian-clusters generator."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

# IDX dtype codes from the format's magic byte
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.base.str.lstrip("<>=|"): k for k, v in _IDX_DTYPES.items()}


def _open_maybe_gz(path: str | Path, mode: str):
    p = Path(path)
    if p.suffix == ".gz":
        return gzip.open(p, mode)
    return open(p, mode)


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file: 0x0000 prefix, dtype byte, ndim byte, big-endian
    u32 dims, then raw big-endian data."""
    with _open_maybe_gz(path, "rb") as f:
        header = f.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise InputError(f"{path}: not an IDX file (bad magic)")
        dtype_code, ndim = header[2], header[3]
        if dtype_code not in _IDX_DTYPES:
            raise InputError(f"{path}: unknown IDX dtype code 0x{dtype_code:02x}")
        dims = struct.unpack(f">{ndim}I", f.read(4 * ndim))
        dt = _IDX_DTYPES[dtype_code]
        count = int(np.prod(dims)) if ndim else 1
        raw = f.read(count * dt.itemsize)
        if len(raw) != count * dt.itemsize:
            raise InputError(f"{path}: truncated IDX payload")
        return np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.base.newbyteorder("="))


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    kind = arr.dtype.str.lstrip("<>=|")
    if kind not in _IDX_CODES:
        raise InputError(f"dtype {arr.dtype} has no IDX code")
    with _open_maybe_gz(path, "wb") as f:
        f.write(bytes([0, 0, _IDX_CODES[kind], arr.ndim]))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder(">")).tobytes())


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.X_train.shape[1:]


def load_csv_dataset(path: str | Path, label_column: str, test_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Labeled CSV with a header row; every non-label column is a feature."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if label_column not in header:
            raise ConfigError(f"label column {label_column!r} not in CSV header {header}")
        li = header.index(label_column)
        feats, labels = [], []
        for row in reader:
            labels.append(int(float(row[li])))
            feats.append([float(v) for j, v in enumerate(row) if j != li])
    X = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) < 2:
        raise InputError(f"{path}: need at least 2 rows")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    n_test = max(1, int(len(X) * test_fraction))
    test, train = perm[:n_test], perm[n_test:]
    return Dataset(X[train], y[train], X[test], y[test])


def synthetic_clusters(
    classes: int = 10,
    dim: int = 784,
    train_samples: int = 4096,
    test_samples: int = 1024,
    noise: float = 0.35,
    seed: int = 7,
) -> Dataset:
    """Balanced Gaussian clusters with uniform[0,1] means, clipped to [0,1]
    (pixel-like, nonnegative). Deterministic for a given seed."""
    if classes < 2 or dim < 1 or train_samples < classes or test_samples < classes:
        raise ConfigError("synthetic data needs >=2 classes and >=1 sample per class")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, 1.0, size=(classes, dim))

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        y = np.arange(n) % classes
        y = rng.permutation(y)
        X = means[y] + rng.normal(0.0, noise, size=(n, dim))
        return np.clip(X, 0.0, 1.0), y.astype(np.int64)

    X_train, y_train = draw(train_samples)
    X_test, y_test = draw(test_samples)
    return Dataset(X_train, y_train, X_test, y_test)


def load_idx_dataset(
    train_images: str | Path,
    train_labels: str | Path,
    test_images: str | Path,
    test_labels: str | Path,
    scale: float = 255.0,
) -> Dataset:
    """Pairs of IDX image/label files; images are scaled to [0, 1]."""
    Xtr = read_idx(train_images).astype(np.float64) / scale
    ytr = read_idx(train_labels).astype(np.int64)
    Xte = read_idx(test_images).astype(np.float64) / scale
    yte = read_idx(test_labels).astype(np.int64)
    if len(Xtr) != len(ytr) or len(Xte) != len(yte):
        raise InputError("image/label counts differ")
    return Dataset(Xtr.reshape(len(Xtr), -1), ytr, Xte.reshape(len(Xte), -1), yte)
