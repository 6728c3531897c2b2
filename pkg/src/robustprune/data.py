"""Dataset ingestion (IDX, CIFAR-10 binary), splitting, and batching.

Pixels are scaled to [0,1] and nothing else: attack budgets stay in raw
pixel units. The built-in "digits" dataset (scikit-learn's handwritten
digits, optionally resized) keeps the whole suite runnable offline.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixels


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"image count {len(self.images)} != label count {len(self.labels)}"
            )

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def subset(self, idx, split=None):
        return Dataset(self.images[idx], self.labels[idx], split or self.split)


def _read_be32(f, path):
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair (MNIST format, big endian)."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        n = _read_be32(f, images_path)
        h = _read_be32(f, images_path)
        w = _read_be32(f, images_path)
        payload = f.read()
        if len(payload) != n * h * w:
            raise FormatError(
                f"{images_path}: expected {n * h * w} pixel bytes, got {len(payload)}"
            )
        images = np.frombuffer(payload, dtype=np.uint8).reshape(n, 1, h, w) / 255.0

    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        n_labels = _read_be32(f, labels_path)
        payload = f.read()
        if len(payload) != n_labels:
            raise FormatError(
                f"{labels_path}: expected {n_labels} label bytes, got {len(payload)}"
            )
        labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise FormatError(f"image count {n} != label count {n_labels}")
    return Dataset(images, labels)


def save_idx(images, labels, images_path, labels_path) -> None:
    """Encode uint8 images (N, 1, H, W) / labels back into IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, _, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_cifar_binary(paths) -> Dataset:
    """Parse CIFAR-10 binary batch files (3073-byte records, RGB planes)."""
    images, labels = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32) / 255.0)
    return Dataset(np.concatenate(images), np.concatenate(labels))


def load_digits_dataset(image_size: int = 8) -> Dataset:
    """scikit-learn handwritten digits, nearest-neighbour resized if asked.

    Local and download-free; the desk-scale stand-in for MNIST-style runs.
    """
    from sklearn.datasets import load_digits

    x, y = load_digits(return_X_y=True)
    images = (x / 16.0).reshape(-1, 1, 8, 8)
    if image_size != 8:
        idx = (np.arange(image_size) * 8) // image_size
        images = images[:, :, idx][:, :, :, idx]
    return Dataset(images, y)


def train_val_split(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic 90/10 split: validation is the last 10% of a seeded permutation."""
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = n // 10
    cut = n - n_val
    return dataset.subset(perm[:cut], "train"), dataset.subset(perm[cut:], "val")


def split_batches(dataset: Dataset, batch_size: int, shuffle_seed: int,
                  fraction: float = 1.0):
    """Deterministic per-epoch batch stream.

    fraction f keeps the first ceil(f * N) examples of the seeded permutation;
    each epoch then reshuffles that subset as a function of (seed, epoch).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    keep = math.ceil(fraction * len(dataset))
    base = np.random.default_rng(shuffle_seed).permutation(len(dataset))[:keep]
    return BatchStream(dataset, base, batch_size, shuffle_seed)


class BatchStream:
    def __init__(self, dataset, indices, batch_size, seed):
        self.dataset = dataset
        self.indices = indices
        self.batch_size = batch_size
        self.seed = seed

    def __len__(self):
        return len(self.indices)

    @property
    def batches_per_epoch(self):
        return math.ceil(len(self.indices) / self.batch_size)

    def epoch(self, epoch_index: int):
        """Yield (images, labels) batches for the given epoch."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch_index]))
        order = self.indices[rng.permutation(len(self.indices))]
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            yield self.dataset.images[idx], self.dataset.labels[idx]
