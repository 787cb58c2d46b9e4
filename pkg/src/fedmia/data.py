"""Datasets, IDX parsing, synthetic blobs and client partitioning."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    # (rows, cols) when the features came from an IDX image file
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {labels.shape} labels")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       name or self.name, self.image_shape)

    def equals(self, other: "Dataset") -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


# --- IDX -------------------------------------------------------------------

def _read_header(buf: bytes, path, expected_magic: int, n_dims: int):
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagicError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    end = 4 + 4 * n_dims
    if len(buf) < end:
        raise TruncatedFileError(f"{path}: header truncated")
    return struct.unpack(f">{n_dims}I", buf[4:end]), end


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (count, rows, cols), off = _read_header(buf, path, IDX_IMAGES_MAGIC, 3)
    need = count * rows * cols
    if len(buf) - off < need:
        raise TruncatedFileError(
            f"{path}: expected {need} pixel bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(
        count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (count,), off = _read_header(buf, path, IDX_LABELS_MAGIC, 1)
    if len(buf) - off < count:
        raise TruncatedFileError(
            f"{path}: expected {count} label bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=off)


def load_idx(images_path, labels_path, num_classes: int | None = None,
             limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair, scaling pixels to [0, 1].

    ``num_classes`` defaults to ``max(label) + 1``. ``limit`` keeps the first
    ``limit`` samples (file order is preserved).
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    rows, cols = images.shape[1:]
    features = images.reshape(images.shape[0], rows * cols) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels.astype(np.int64), num_classes,
                   Path(images_path).stem, (rows, cols))


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Serialize ``dataset`` as an IDX pair. Features must be multiples of 1/255."""
    if dataset.image_shape is not None:
        rows, cols = dataset.image_shape
    else:
        rows, cols = 1, dataset.n_features
    if rows * cols != dataset.n_features:
        raise ValueError("image_shape does not match feature width")
    pixels = np.rint(dataset.features * 255.0)
    if not np.array_equal(pixels / 255.0, dataset.features):
        raise ValueError("features are not representable as 8-bit pixels")
    if dataset.labels.size and dataset.labels.max() > 255:
        raise ValueError("labels do not fit in one byte")
    n = len(dataset)
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols)
        + pixels.astype(np.uint8).tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, n)
        + dataset.labels.astype(np.uint8).tobytes())


# --- synthetic blobs ---------------------------------------------------------

def _class_means(n_classes: int, n_features: int, separation: float,
                 rng: np.random.Generator) -> np.ndarray:
    if n_features >= n_classes:
        # regular simplex: scaled unit vectors, all pairwise distances equal
        means = np.zeros((n_classes, n_features))
        means[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
        return means
    # too few dimensions for a simplex: random means rescaled so the closest
    # pair sits exactly `separation` apart
    means = rng.standard_normal((n_classes, n_features))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(-1))
    closest = dist[np.triu_indices(n_classes, 1)].min()
    return means * (separation / closest)


def generate_synthetic(n_samples: int, n_features: int, n_classes: int,
                       class_separation: float, seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, min-max scaled to [0, 1]."""
    if n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    if n_samples < n_classes:
        raise ValueError("n_samples must be at least n_classes")
    if n_features < 1:
        raise ValueError("n_features must be positive")
    if class_separation <= 0:
        raise ValueError("class_separation must be positive")
    rng = np.random.default_rng(seed)
    means = _class_means(n_classes, n_features, class_separation, rng)
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    raw = means[labels] + rng.standard_normal((n_samples, n_features))
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    features = (raw - lo) / span
    return Dataset(features, labels, n_classes,
                   f"blobs-{n_samples}x{n_features}-c{n_classes}-s{class_separation:g}")


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.n_features)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path, num_classes: int | None = None, name: str | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        rows = [r for r in reader if r]
    features = np.array([[float(v) for v in r[:-1]] for r in rows],
                        dtype=np.float64).reshape(len(rows), len(header) - 1)
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, num_classes, name or Path(path).stem)


# --- partitioning ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartitionPlan:
    assignments: tuple[np.ndarray, ...]
    n_clients: int
    source_size: int

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


def partition(dataset_size: int, n_clients: int, seed: int) -> PartitionPlan:
    """Deal a seeded shuffle of ``range(dataset_size)`` into near-even chunks.

    The first ``dataset_size % n_clients`` clients get one extra index. Each
    chunk is returned sorted, so a single client holds ``0..N-1`` in order.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be at least 1")
    if n_clients > dataset_size:
        raise ValueError(
            f"cannot split {dataset_size} samples across {n_clients} clients")
    perm = np.random.default_rng(seed).permutation(dataset_size)
    base, extra = divmod(dataset_size, n_clients)
    chunks, start = [], 0
    for c in range(n_clients):
        size = base + (1 if c < extra else 0)
        chunks.append(_frozen(np.sort(perm[start:start + size])))
        start += size
    return PartitionPlan(tuple(chunks), n_clients, dataset_size)


@dataclass(frozen=True, eq=False)
class MembershipSplit:
    member_indices: np.ndarray
    nonmember_indices: np.ndarray
    member_eval: np.ndarray = field(default=None)
    nonmember_eval: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("member_indices", "nonmember_indices", "member_eval",
                     "nonmember_eval"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name,
                                   _frozen(np.asarray(value, dtype=np.int64)))
        if np.intersect1d(self.member_indices, self.nonmember_indices).size:
            raise ValueError("member and non-member indices overlap")

    @property
    def eval_size(self) -> int:
        return 0 if self.member_eval is None else len(self.member_eval)


def make_membership_split(dataset: Dataset, train_fraction: float,
                          eval_size: int, seed: int) -> MembershipSplit:
    """Split ``dataset`` into training members and held-out non-members.

    ``eval_size`` indices are drawn without replacement from each population
    for attack evaluation.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_members = int(round(train_fraction * n))
    members, nonmembers = perm[:n_members], perm[n_members:]
    return membership_split_from(members, nonmembers, eval_size, rng)


def membership_split_from(members, nonmembers, eval_size: int,
                          rng: np.random.Generator) -> MembershipSplit:
    members = np.asarray(members, dtype=np.int64)
    nonmembers = np.asarray(nonmembers, dtype=np.int64)
    if eval_size < 1:
        raise ValueError("eval_size must be positive")
    if eval_size > min(len(members), len(nonmembers)):
        raise ValueError(
            f"eval_size={eval_size} exceeds population sizes "
            f"({len(members)} members, {len(nonmembers)} non-members)")
    member_eval = rng.choice(members, size=eval_size, replace=False)
    nonmember_eval = rng.choice(nonmembers, size=eval_size, replace=False)
    return MembershipSplit(np.sort(members), np.sort(nonmembers),
                           member_eval, nonmember_eval)
