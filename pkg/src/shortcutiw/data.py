"""CIFAR-10 binary ingestion, class-pair splits, batching, normalization.

The binary format is the published one: 3073-byte records, 1 label byte then
1024 red + 1024 green + 1024 blue bytes, row-major within channel.  Records
are held columnar (arrays over N) for speed; indexing yields single
ImageRecord views.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
NUM_CLASSES = 10

TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"

ROLES = ("train", "validation", "test-congruent", "test-incongruent", "test-neutral")


class DataError(ValueError):
    """Malformed dataset file or unsatisfiable split request."""


@dataclass(frozen=True)
class ImageRecord:
    pixels: np.ndarray  # (3, 32, 32) uint8, channel-major
    label: int
    source_index: int


@dataclass
class Records:
    """Columnar batch of labeled images."""

    pixels: np.ndarray        # (N, 3, 32, 32) uint8
    labels: np.ndarray        # (N,) int64
    source_index: np.ndarray  # (N,) int64

    def __post_init__(self):
        n = len(self.pixels)
        if self.pixels.shape[1:] != IMAGE_SHAPE:
            raise DataError(f"pixels shape {self.pixels.shape[1:]} != {IMAGE_SHAPE}")
        if len(self.labels) != n or len(self.source_index) != n:
            raise DataError("column lengths disagree")

    def __len__(self):
        return len(self.pixels)

    def __getitem__(self, i: int) -> ImageRecord:
        return ImageRecord(self.pixels[i], int(self.labels[i]), int(self.source_index[i]))

    def take(self, idx) -> "Records":
        idx = np.asarray(idx)
        return Records(self.pixels[idx].copy(), self.labels[idx].copy(), self.source_index[idx].copy())

    def copy(self) -> "Records":
        return Records(self.pixels.copy(), self.labels.copy(), self.source_index.copy())


@dataclass
class DatasetSplit:
    records: Records
    shortcut_flags: np.ndarray  # (N,) bool
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}, expected one of {ROLES}")
        if len(self.shortcut_flags) != len(self.records):
            raise DataError("shortcut_flags length does not match records")
        flags = np.asarray(self.shortcut_flags, dtype=bool)
        if self.role in ("test-congruent", "test-incongruent") and not flags.all():
            raise DataError(f"{self.role} split must flag every record")
        if self.role == "test-neutral" and flags.any():
            raise DataError("test-neutral split must flag no record")
        self.shortcut_flags = flags

    def __len__(self):
        return len(self.records)


def load_cifar(path) -> Records:
    """Parse one CIFAR-10 binary batch file."""
    data = Path(path).read_bytes()
    if len(data) % RECORD_BYTES:
        raise DataError(
            f"{path}: file length {len(data)} is not a multiple of {RECORD_BYTES} "
            f"(expected whole {RECORD_BYTES}-byte records)"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if len(labels) and labels.max() >= NUM_CLASSES:
        raise DataError(f"{path}: label byte {labels.max()} out of range (max {NUM_CLASSES - 1})")
    pixels = raw[:, 1:].reshape(-1, *IMAGE_SHAPE).copy()
    return Records(pixels, labels, np.arange(len(labels), dtype=np.int64))


def save_cifar(path, records: Records):
    """Write records back out in the same binary layout."""
    n = len(records)
    raw = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    raw[:, 0] = records.labels.astype(np.uint8)
    raw[:, 1:] = records.pixels.reshape(n, -1)
    Path(path).write_bytes(raw.tobytes())


def load_cifar_train(data_dir) -> Records:
    """Concatenate the five training batch files; source_index runs globally."""
    parts = []
    for name in TRAIN_FILES:
        path = Path(data_dir) / name
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR batch file: {path}")
        parts.append(load_cifar(path))
    pixels = np.concatenate([p.pixels for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return Records(pixels, labels, np.arange(len(labels), dtype=np.int64))


def load_cifar_test(data_dir) -> Records:
    path = Path(data_dir) / TEST_FILE
    if not path.exists():
        raise FileNotFoundError(f"missing CIFAR batch file: {path}")
    return load_cifar(path)


def default_data_dir() -> str | None:
    return os.environ.get("SHORTCUTIW_DATA_DIR")


def make_pair_splits(train_source: Records, test_source: Records, class_a: int, class_b: int,
                     split_seed: int) -> tuple[DatasetSplit, DatasetSplit, Records]:
    """Seeded 4500/500 train/validation split per class, labels remapped to {0,1}.

    Test keeps the first 1000 test-source images per class in file order.
    """
    if class_a == class_b:
        raise DataError(f"need two distinct classes, got {class_a} twice")
    rng = np.random.default_rng(split_seed)
    train_idx, val_idx, new_train_labels, new_val_labels = [], [], [], []
    test_idx, new_test_labels = [], []
    for new_label, cls in enumerate((class_a, class_b)):
        cls_idx = np.flatnonzero(train_source.labels == cls)
        if len(cls_idx) < 5000:
            raise DataError(f"class {cls}: need 5000 train-source records, found {len(cls_idx)}")
        perm = rng.permutation(cls_idx[:5000])
        train_idx.append(np.sort(perm[:4500]))
        val_idx.append(np.sort(perm[4500:5000]))
        new_train_labels.append(np.full(4500, new_label, dtype=np.int64))
        new_val_labels.append(np.full(500, new_label, dtype=np.int64))

        cls_test = np.flatnonzero(test_source.labels == cls)
        if len(cls_test) < 1000:
            raise DataError(f"class {cls}: need 1000 test-source records, found {len(cls_test)}")
        test_idx.append(cls_test[:1000])
        new_test_labels.append(np.full(1000, new_label, dtype=np.int64))

    def assemble(source, idx_parts, label_parts):
        idx = np.concatenate(idx_parts)
        out = source.take(idx)
        out.labels = np.concatenate(label_parts)
        return out

    train = assemble(train_source, train_idx, new_train_labels)
    val = assemble(train_source, val_idx, new_val_labels)
    test = assemble(test_source, test_idx, new_test_labels)
    return (
        DatasetSplit(train, np.zeros(len(train), dtype=bool), "train"),
        DatasetSplit(val, np.zeros(len(val), dtype=bool), "validation"),
        test,
    )


def subsample_split(split: DatasetSplit, per_class: int, seed: int) -> DatasetSplit:
    """Seeded per-class subsample, preserving the original record order."""
    rng = np.random.default_rng(seed)
    keep = []
    for cls in np.unique(split.records.labels):
        cls_idx = np.flatnonzero(split.records.labels == cls)
        if len(cls_idx) < per_class:
            raise DataError(f"class {cls}: cannot subsample {per_class} from {len(cls_idx)}")
        keep.append(np.sort(rng.permutation(cls_idx)[:per_class]))
    keep = np.concatenate(keep)
    return DatasetSplit(split.records.take(keep), split.shortcut_flags[keep].copy(), split.role)


def make_batches(split_or_n, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Seeded permutation of all indices, chunked; the final short chunk kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = split_or_n if isinstance(split_or_n, int) else len(split_or_n)
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std of [0,1]-scaled pixels, fitted on one split."""

    mean: np.ndarray  # (3,) float64
    std: np.ndarray   # (3,) float64


def channel_stats(pixels: np.ndarray) -> ChannelStats:
    """Fit per-channel statistics; degenerate (zero) stds are replaced by 1."""
    scaled = pixels.astype(np.float64) / 255.0
    mean = scaled.mean(axis=(0, 2, 3))
    std = scaled.std(axis=(0, 2, 3))
    std = np.where(std == 0, 1.0, std)
    return ChannelStats(mean, std)


def normalize_for_model(pixels: np.ndarray, stats: ChannelStats, dtype=np.float32) -> np.ndarray:
    """byte/255 then per-channel standardization with the supplied statistics.

    Accepts one image (3,32,32) or a batch (N,3,32,32).
    """
    single = pixels.ndim == 3
    batch = pixels[None] if single else pixels
    scaled = batch.astype(np.float64) / 255.0
    out = (scaled - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    out = out.astype(dtype)
    return out[0] if single else out
