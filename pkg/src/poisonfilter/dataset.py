"""Datasets: the labelled-data carrier, generators, file loaders and splits."""
from __future__ import annotations

import csv
import gzip
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input files or infeasible dataset operations."""


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard normals from uniform doubles via the Box-Muller transform."""
    pairs = (size + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    # 1 - u1 lies in (0, 1], keeping the log finite
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * math.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:size]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """An n x d feature matrix paired with labels in {-1, +1}.

    Arrays are copied and frozen on construction. Rows may repeat.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.labels, dtype=float, copy=True).reshape(-1)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 1)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[1] < 1:
            raise DatasetError("feature dimension must be at least 1")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise DatasetError("labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain NaN or infinite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return LabeledDataset(self.features[index], self.labels[index])

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.features, labels)

    def of_class(self, label: int) -> "LabeledDataset":
        return self.subset(self.labels == label)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.d != self.d:
            raise DatasetError(f"dimension mismatch: {self.d} vs {other.d}")
        return LabeledDataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
        )

    @classmethod
    def empty(cls, d: int) -> "LabeledDataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class GaussianSpec:
    mean_pos: tuple
    mean_neg: tuple
    cov_scale: float = 0.6
    n_per_class: int = 25
    seed: int = 0

    def __post_init__(self):
        if not self.cov_scale > 0:
            raise DatasetError("cov_scale must be positive")
        if len(self.mean_pos) != len(self.mean_neg):
            raise DatasetError("class means must have the same dimension")
        if self.n_per_class < 0:
            raise DatasetError("n_per_class must be non-negative")


def gen_gaussian_binary(spec: GaussianSpec) -> LabeledDataset:
    """Two isotropic Gaussian classes; +1 rows come first."""
    mu_pos = np.asarray(spec.mean_pos, dtype=float)
    mu_neg = np.asarray(spec.mean_neg, dtype=float)
    d = mu_pos.shape[0]
    m = spec.n_per_class
    rng = make_rng(spec.seed)
    z = box_muller(rng, 2 * m * d).reshape(2 * m, d)
    scale = math.sqrt(spec.cov_scale)
    X = np.vstack([mu_pos + scale * z[:m], mu_neg + scale * z[m:]])
    y = np.concatenate([np.ones(m), -np.ones(m)])
    return LabeledDataset(X, y)


def _open_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


SPAMBASE_COLUMNS = 58
SPAMBASE_TERM_COLUMNS = 54


SPAMBASE_DEDUP = ("raw", "binarized")


def load_spambase(path, dedup: str = "raw") -> LabeledDataset:
    """Load the UCI Spambase CSV as binary bag-of-words features.

    Keeps the 54 term-frequency columns and maps each frequency to 1 if
    positive else 0; spam is +1, ham -1. Exact duplicates of (features, label)
    are dropped, first occurrence wins. With ``dedup="raw"`` duplicates are
    judged on the original frequencies (4100 rows on the full UCI file); with
    ``"binarized"`` on the 0/1 vectors, which merges far more rows.
    """
    if dedup not in SPAMBASE_DEDUP:
        raise DatasetError(f"dedup must be one of {SPAMBASE_DEDUP}, got {dedup!r}")
    text = _open_maybe_gzip(path).decode("ascii", errors="replace")
    rows = []
    labels = []
    seen = set()
    for lineno, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not record or all(not f.strip() for f in record):
            continue
        if len(record) != SPAMBASE_COLUMNS:
            raise DatasetError(
                f"line {lineno}: expected {SPAMBASE_COLUMNS} columns, got {len(record)}"
            )
        try:
            values = [float(f) for f in record]
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: non-numeric field ({exc})") from None
        cls = values[-1]
        if cls not in (0.0, 1.0):
            raise DatasetError(f"line {lineno}: class column must be 0 or 1, got {cls}")
        freqs = tuple(values[:SPAMBASE_TERM_COLUMNS])
        key = (freqs if dedup == "raw" else tuple(v > 0 for v in freqs), cls)
        if key in seen:
            continue
        seen.add(key)
        rows.append(freqs)
        labels.append(1.0 if cls == 1.0 else -1.0)
    X = (np.asarray(rows, dtype=float).reshape(-1, SPAMBASE_TERM_COLUMNS) > 0).astype(float)
    return LabeledDataset(X, np.asarray(labels))


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx_images(path) -> np.ndarray:
    raw = _open_maybe_gzip(path)
    if len(raw) < 16:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{path}: bad magic number {magic:#010x} for images")
    expected = count * rows * cols
    payload = raw[16:]
    if len(payload) < expected:
        raise DatasetError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _open_maybe_gzip(path)
    if len(raw) < 8:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{path}: bad magic number {magic:#010x} for labels")
    payload = raw[8:]
    if len(payload) < count:
        raise DatasetError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    return np.frombuffer(payload[:count], dtype=np.uint8)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray, side: int = 28):
    """Write uint8 images (n, side*side) and labels in IDX format (gzip if path ends in .gz)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, images.shape[0], side, side) + images.tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    for path, blob in ((images_path, img), (labels_path, lab)):
        path = Path(path)
        path.write_bytes(gzip.compress(blob, mtime=0) if path.suffix == ".gz" else blob)


def load_mnist_1v7(images_path, labels_path) -> LabeledDataset:
    """Digits 7 (+1) and 1 (-1) from MNIST IDX files, pixels scaled to [0, 1]."""
    images = read_idx_images(images_path)
    digits = read_idx_labels(labels_path)
    if images.shape[0] != digits.shape[0]:
        raise DatasetError(
            f"image/label count mismatch: {images.shape[0]} images, {digits.shape[0]} labels"
        )
    keep = (digits == 1) | (digits == 7)
    X = images[keep].astype(float) / 255.0
    y = np.where(digits[keep] == 7, 1.0, -1.0)
    return LabeledDataset(X, y)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_od_train: int = 0
    n_val: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_od_train, self.n_val) < 0:
            raise DatasetError("split sizes must be non-negative")


@dataclass(frozen=True)
class Split:
    train: LabeledDataset
    od_train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    index: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        return iter((self.train, self.od_train, self.val, self.test))


def split(data: LabeledDataset, spec: SplitSpec) -> Split:
    """Partition a seeded permutation into (train, od_train, val, test)."""
    n = len(data)
    used = spec.n_train + spec.n_od_train + spec.n_val
    if used > n:
        raise DatasetError(f"split sizes sum to {used} but dataset has {n} examples")
    perm = make_rng(spec.seed).permutation(n)
    cuts = np.cumsum([spec.n_train, spec.n_od_train, spec.n_val])
    parts = np.split(perm, cuts)
    names = ("train", "od_train", "val", "test")
    return Split(*(data.subset(p) for p in parts), index=dict(zip(names, parts)))
