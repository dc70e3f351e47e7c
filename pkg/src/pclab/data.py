"""Dataset ingestion: IDX image files, numeric CSV, and seeded synthetic data."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from pclab.network import NetworkSpec, Params
from pclab.linalg import as_batch

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class IdxFormatError(ValueError):
    """An IDX file is malformed, truncated, or mismatched with its pair."""


@dataclass
class Dataset:
    """Inputs and targets, one row per sample."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = as_batch(self.x)
        self.y = as_batch(self.y)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"input rows ({self.x.shape[0]}) != target rows ({self.y.shape[0]})"
            )

    def __len__(self) -> int:
        return self.x.shape[0]


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file into float64 rows scaled to [0, 1]."""
    with _open_maybe_gzip(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad magic {magic}, expected {IDX_IMAGES_MAGIC}")
        payload = fh.read(count * rows * cols)
    if len(payload) != count * rows * cols:
        raise IdxFormatError(
            f"{path}: expected {count * rows * cols} pixel bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into an int array."""
    with _open_maybe_gzip(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{path}: truncated header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad magic {magic}, expected {IDX_LABELS_MAGIC}")
        payload = fh.read(count)
    if len(payload) != count:
        raise IdxFormatError(f"{path}: expected {count} label bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Load an image/label IDX pair; labels become one-hot targets."""
    x = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if x.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image count {x.shape[0]} != label count {labels.shape[0]}"
        )
    k = n_classes if n_classes is not None else int(labels.max()) + 1 if labels.size else 1
    return Dataset(x, one_hot(labels, k))


def load_csv(path, task: str = "classify", n_classes: int | None = None) -> Dataset:
    """Load a numeric, headerless, comma-separated file.

    For classification the last column holds integer class labels and the
    rest are features; for autoencoding every column is a feature and the
    target is the input itself.
    """
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if task == "autoencode":
        return Dataset(data, data.copy())
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus labels")
    features = data[:, :-1]
    labels = data[:, -1]
    if not np.allclose(labels, np.round(labels)):
        raise ValueError(f"{path}: label column must hold integers")
    labels = labels.astype(np.int64)
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    return Dataset(features, one_hot(labels, k))


def synth_blobs(
    seed: int,
    n: int,
    dim: int,
    classes: int,
    spread: float = 0.15,
    pixel_like: bool = False,
) -> Dataset:
    """Gaussian clusters around seeded class prototypes.

    With `pixel_like` the prototypes live in [0, 1] and samples are clipped
    there, mimicking image data.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    if pixel_like:
        centers = rng.uniform(0.1, 0.9, (classes, dim))
    else:
        centers = rng.uniform(-1.0, 1.0, (classes, dim))
    labels = rng.integers(0, classes, n)
    x = centers[labels] + rng.normal(0.0, spread, (n, dim))
    if pixel_like:
        x = np.clip(x, 0.0, 1.0)
    return Dataset(x, one_hot(labels, classes))


def synth_teacher(seed: int, n: int, dims: tuple[int, ...]) -> Dataset:
    """Inputs from a seeded uniform stream, targets from a frozen teacher net."""
    if n < 1:
        raise ValueError("need at least one sample")
    from pclab.training import init_params  # deferred: training imports data

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EAC]))
    spec = NetworkSpec(tuple(dims), hidden_act="tanh", output_nl="identity")
    teacher = init_params(spec, seed=int(rng.integers(0, 2**31)))
    x = rng.uniform(-1.0, 1.0, (n, dims[0]))
    from pclab.network import forward

    y = forward(teacher, x, apply_output=True)[-1]
    return Dataset(x, y)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; the same seed always yields the same split."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must be in (0, 1)")
    n = len(ds)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x59111]))
    order = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    test_idx = order[:n_test]
    train_idx = order[n_test:]
    if train_idx.size == 0:
        raise ValueError("split left no training samples")
    return (
        Dataset(ds.x[train_idx], ds.y[train_idx]),
        Dataset(ds.x[test_idx], ds.y[test_idx]),
    )
