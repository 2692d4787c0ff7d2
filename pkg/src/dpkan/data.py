"""Datasets: CSV and MNIST IDX loaders, a synthetic regression generator,
standardization and seeded train/test splitting."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace

import numpy as np

from dpkan.numerics import Rng, gaussian_sample

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class DataFormatError(ValueError):
    """Base class for malformed input files."""


class MissingColumnError(DataFormatError):
    pass


class NonNumericCellError(DataFormatError):
    def __init__(self, row, col, value):
        super().__init__(f"non-numeric cell {value!r} at (row {row}, column {col})")
        self.row, self.col, self.value = row, col, value


class RaggedRowError(DataFormatError):
    pass


class IdxMagicError(DataFormatError):
    pass


class IdxTruncatedError(DataFormatError):
    pass


class IdxCountMismatchError(DataFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    n_classes: int | None = None
    feature_names: tuple | None = None
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.targets) != self.features.shape[0]:
            raise ValueError(f"{self.features.shape[0]} feature rows but {len(self.targets)} targets")
        if self.task == "classification":
            if self.n_classes is None:
                raise ValueError("classification datasets need n_classes")
            if len(self.targets) and (self.targets.min() < 0 or self.targets.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
        elif self.task != "regression":
            raise ValueError(f"unknown task {self.task!r}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], targets=self.targets[idx])

    def to_csv(self, path, target_name="y"):
        names = self.feature_names or tuple(f"x{j}" for j in range(self.n_features))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(list(names) + [target_name])
            for row, y in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def load_csv(path, target_column, has_header=True) -> Dataset:
    """Load a comma-separated numeric table.

    ``target_column`` is a header name, or a 0-based index when the file has
    no header. Error coordinates are 1-based: data row (header excluded) and
    column.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter=",", quoting=csv.QUOTE_NONE))
    rows = [r for r in rows if r]
    if has_header:
        if not rows:
            raise DataFormatError(f"{path}: empty file")
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    else:
        header = [str(j) for j in range(len(rows[0]))] if rows else []
    key = str(target_column)
    if key not in header:
        raise MissingColumnError(f"target column {target_column!r} not found; available columns: {header}")
    t = header.index(key)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    values = np.empty((len(rows), len(header)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise RaggedRowError(f"row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row, start=1):
            try:
                values[r - 1, c - 1] = float(cell)
            except ValueError:
                raise NonNumericCellError(r, c, cell) from None
    keep = [j for j in range(len(header)) if j != t]
    return Dataset(
        features=values[:, keep],
        targets=values[:, t].copy(),
        feature_names=tuple(header[j] for j in keep) if has_header else None,
    )


def _read_idx(path, magic, n_dims):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        data = f.read()
    if len(data) < 4 + 4 * n_dims:
        raise IdxTruncatedError(f"{path}: header truncated")
    (m,) = struct.unpack(">i", data[:4])
    if m != magic:
        raise IdxMagicError(f"{path}: magic number {m}, expected {magic}")
    dims = struct.unpack(f">{n_dims}i", data[4 : 4 + 4 * n_dims])
    n = int(np.prod(dims))
    payload = data[4 + 4 * n_dims :]
    if len(payload) < n:
        raise IdxTruncatedError(f"{path}: payload has {len(payload)} bytes, header promises {n}")
    return np.frombuffer(payload[:n], dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, mean=MNIST_MEAN, std=MNIST_STD) -> Dataset:
    """Load MNIST IDX files; pixels become ``(p / 255 - mean) / std``."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{labels_path}: label {labels.max()} out of range 0-9")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features=(x - mean) / std, targets=labels.astype(np.int64), task="classification", n_classes=10)


def synthetic_weights(d: int) -> np.ndarray:
    j = np.arange(d)
    return np.where(j % 2 == 0, 1.0, -1.0) * (1.0 + j / d)


def gen_synthetic(n: int, d: int, noise_std: float, seed: int) -> Dataset:
    """Linear-Gaussian regression data: ``y = X w + noise``.

    Features are i.i.d. N(0, 1) and ``w_j = (-1)**j * (1 + j/d)`` for
    ``j = 0..d-1``.
    """
    if n < 1 or d < 1 or noise_std < 0:
        raise ValueError("gen_synthetic needs n >= 1, d >= 1, noise_std >= 0")
    gen = Rng(seed).stream("synthetic")
    x = gaussian_sample(gen, n * d, 1.0).reshape(n, d)
    y = x @ synthetic_weights(d) + gaussian_sample(gen, n, noise_std)
    return Dataset(features=x, targets=y, feature_names=tuple(f"x{j}" for j in range(d)))


def standardize(train: Dataset, others=()):
    """Z-score features with statistics from ``train`` only.

    Columns with zero variance are left untouched. Returns the standardized
    training set and a list with each of ``others`` transformed the same way.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    const = std == 0
    mean = np.where(const, 0.0, mean)
    std = np.where(const, 1.0, std)

    def apply(ds):
        return replace(ds, features=(ds.features - mean) / std, feature_mean=mean, feature_std=std)

    return apply(train), [apply(o) for o in others]


def unstandardize(ds: Dataset) -> np.ndarray:
    if ds.feature_mean is None:
        return ds.features
    return ds.features * ds.feature_std + ds.feature_mean


def train_test_split(data: Dataset, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(data)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"splitting {n} rows with fraction {test_fraction} leaves one side empty")
    perm = Rng(seed).stream("split").permutation(n)
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))
