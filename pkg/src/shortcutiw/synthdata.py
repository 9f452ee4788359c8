"""Synthetic CIFAR-format image generator.

Produces two visually distinct shape families (filled blobs vs. crossing
bars) over textured backgrounds, written in the CIFAR-10 binary layout.
Shape, not color or position, separates the families: placement, scale,
rotation, polarity, and palette are all randomized per image, which keeps
linear models weak on the task while a small CNN can learn it well.

Class ids keep CIFAR semantics (0-9); even ids render blobs, odd ids render
crosses, so any odd/even pair (e.g. 1 vs 6) gives a learnable problem.
Every image is a pure function of (dataset seed, class id, index).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Records, save_cifar, TRAIN_FILES, TEST_FILE
from .seeding import derive_seed

_GRID = np.meshgrid(np.arange(32, dtype=np.float64), np.arange(32, dtype=np.float64), indexing="ij")


def _rotated(dy, dx, theta):
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    return u, v


def _blob_mask(rng) -> np.ndarray:
    cy, cx = rng.uniform(10, 22, size=2)
    ry, rx = rng.uniform(4.5, 8.0, size=2)
    theta = rng.uniform(0, np.pi)
    u, v = _rotated(_GRID[0] - cy, _GRID[1] - cx, theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _cross_mask(rng) -> np.ndarray:
    cy, cx = rng.uniform(10, 22, size=2)
    theta = rng.uniform(0, np.pi)
    skew = rng.uniform(-0.25, 0.25)
    half_len = rng.uniform(6.5, 10.0)
    half_width = rng.uniform(1.5, 2.4)
    u, v = _rotated(_GRID[0] - cy, _GRID[1] - cx, theta)
    bar1 = (np.abs(u) <= half_len) & (np.abs(v) <= half_width)
    u2, v2 = _rotated(_GRID[0] - cy, _GRID[1] - cx, theta + np.pi / 2 + skew)
    bar2 = (np.abs(u2) <= half_len) & (np.abs(v2) <= half_width)
    return bar1 | bar2


def generate_image(class_id: int, rng: np.random.Generator) -> np.ndarray:
    """One (3,32,32) uint8 image of the class's shape family."""
    yy, xx = _GRID
    base = rng.uniform(0.2, 0.8, size=3)
    gx, gy = rng.uniform(-0.25, 0.25, size=2)
    img = (base[:, None, None]
           + gx * (xx[None] - 16) / 16.0
           + gy * (yy[None] - 16) / 16.0
           + rng.normal(0.0, 0.05, size=(3, 32, 32)))

    mask = _blob_mask(rng) if class_id % 2 == 0 else _cross_mask(rng)
    # object color per channel is pushed away from the background so the
    # shape stays visible; direction is random so color itself carries no
    # class information
    offset = rng.uniform(0.35, 0.6, size=3) * rng.choice((-1.0, 1.0), size=3)
    color = np.clip(base + offset, 0.0, 1.0)
    alpha = rng.uniform(0.7, 1.0) * mask[None]
    img = img * (1 - alpha) + color[:, None, None] * alpha
    img += rng.normal(0.0, 0.03, size=(3, 32, 32))
    return np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def generate_records(classes, per_class: int, seed: int, offset: int = 0) -> Records:
    """Images for the given classes, interleaved class-by-class."""
    pixels, labels = [], []
    for index in range(per_class):
        for cls in classes:
            rng = np.random.default_rng(derive_seed(seed, cls, offset + index))
            pixels.append(generate_image(cls, rng))
            labels.append(cls)
    return Records(np.stack(pixels), np.asarray(labels, dtype=np.int64),
                   np.arange(len(labels), dtype=np.int64))


def write_synthetic_cifar(data_dir, classes=(1, 6), train_per_class: int = 5000,
                          test_per_class: int = 1000, seed: int = 0):
    """Write CIFAR-layout batch files (5 train batches + 1 test batch)."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    classes = tuple(classes)
    if train_per_class % len(TRAIN_FILES):
        raise ValueError(f"train_per_class must divide evenly across {len(TRAIN_FILES)} batch files")
    per_file = train_per_class // len(TRAIN_FILES)
    for i, name in enumerate(TRAIN_FILES):
        records = generate_records(classes, per_file, seed, offset=i * per_file)
        save_cifar(data_dir / name, records)
    test = generate_records(classes, test_per_class, derive_seed(seed, 9999), offset=0)
    save_cifar(data_dir / TEST_FILE, test)
    return data_dir
