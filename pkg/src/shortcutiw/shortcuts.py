"""Synthetic shortcut injection and the three evaluation sets.

Two shortcut kinds: a salient local one (a 3-pixel horizontal line near the
upper-left corner, one color per class) and a subtle global one (an additive
per-class Gaussian noise mask).  Injection is a pure function of the spec's
seeds, so datasets rebuild bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ROLES, DataError, DatasetSplit, Records
from .seeding import derive_seed

LINE_ROW = 1
LINE_COLS = slice(1, 4)  # columns 1-3, one-pixel inset from the corner
DEFAULT_LINE_COLORS = ((255, 0, 0), (0, 0, 255))  # class 0 red, class 1 blue
DEFAULT_MASK_VARIANCE = 25e-4


@dataclass(frozen=True)
class ShortcutSpec:
    """Full parameterization of one shortcut experiment."""

    kind: str  # "local" | "global"
    prevalence: float = 0.3
    injection_seed: int = 0
    line_colors: tuple = DEFAULT_LINE_COLORS
    mask_variance: float = DEFAULT_MASK_VARIANCE
    mask_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("local", "global"):
            raise ValueError(f"unknown shortcut kind {self.kind!r}")
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError(f"prevalence must lie in [0,1], got {self.prevalence}")
        if self.kind == "local" and len(self.line_colors) != 2:
            raise ValueError("need exactly one line color per class")
        if self.mask_variance <= 0:
            raise ValueError(f"mask_variance must be positive, got {self.mask_variance}")


def make_gaussian_masks(spec: ShortcutSpec) -> np.ndarray:
    """Two (3,32,32) masks of i.i.d. Normal(0, variance) values in [0,1] units.

    Deterministic given mask_seed; sampled once per experiment, never per image.
    """
    if spec.kind != "global":
        raise ValueError(f"masks only exist for global shortcuts, spec is {spec.kind!r}")
    rng = np.random.default_rng(spec.mask_seed)
    return rng.normal(0.0, np.sqrt(spec.mask_variance), size=(2, 3, 32, 32))


def _selection(split: DatasetSplit, spec: ShortcutSpec) -> dict[int, np.ndarray]:
    """Seeded per-class choice of floor(prevalence * n_class) record positions.

    The choice stream is derived from (injection_seed, split role) so train
    and validation selections are independent.
    """
    rng = np.random.default_rng(derive_seed(spec.injection_seed, ROLES.index(split.role)))
    chosen = {}
    for cls in (0, 1):
        positions = np.flatnonzero(split.records.labels == cls)
        count = int(np.floor(spec.prevalence * len(positions)))
        chosen[cls] = np.sort(rng.permutation(positions)[:count])
    return chosen


def paint_line(pixels: np.ndarray, color) -> np.ndarray:
    """Overwrite the designated 3 pixels with a color; other bytes untouched."""
    out = pixels.copy()
    col = np.asarray(color, dtype=np.uint8)
    out[..., :, LINE_ROW, LINE_COLS] = col[:, None] if out.ndim == 3 else col[None, :, None]
    return out


def add_mask(pixels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """[0,1]-scale addition, clamp, and re-quantization to bytes."""
    scaled = pixels.astype(np.float64) / 255.0 + mask
    return np.rint(255.0 * np.clip(scaled, 0.0, 1.0)).astype(np.uint8)


def inject_local(split: DatasetSplit, spec: ShortcutSpec) -> DatasetSplit:
    """Line-inject a seeded fraction of each class; flags mark injected records."""
    if spec.kind != "local":
        raise ValueError(f"inject_local needs a local spec, got {spec.kind!r}")
    pixels = split.records.pixels.copy()
    flags = split.shortcut_flags.copy()
    for cls, positions in _selection(split, spec).items():
        if len(positions):
            pixels[positions] = paint_line(pixels[positions], spec.line_colors[cls])
            flags[positions] = True
    records = Records(pixels, split.records.labels.copy(), split.records.source_index.copy())
    return DatasetSplit(records, flags, split.role)


def inject_global(split: DatasetSplit, spec: ShortcutSpec) -> DatasetSplit:
    """Mask-inject a seeded fraction of each class; selection as inject_local."""
    if spec.kind != "global":
        raise ValueError(f"inject_global needs a global spec, got {spec.kind!r}")
    masks = make_gaussian_masks(spec)
    pixels = split.records.pixels.copy()
    flags = split.shortcut_flags.copy()
    for cls, positions in _selection(split, spec).items():
        if len(positions):
            pixels[positions] = add_mask(pixels[positions], masks[cls])
            flags[positions] = True
    records = Records(pixels, split.records.labels.copy(), split.records.source_index.copy())
    return DatasetSplit(records, flags, split.role)


def inject(split: DatasetSplit, spec: ShortcutSpec) -> DatasetSplit:
    return inject_local(split, spec) if spec.kind == "local" else inject_global(split, spec)


def _inject_all(records: Records, spec: ShortcutSpec, class_of_shortcut: np.ndarray) -> Records:
    """Shortcut every record, using the shortcut of the given class per record."""
    pixels = records.pixels.copy()
    masks = make_gaussian_masks(spec) if spec.kind == "global" else None
    for cls in (0, 1):
        positions = np.flatnonzero(class_of_shortcut == cls)
        if not len(positions):
            continue
        if spec.kind == "local":
            pixels[positions] = paint_line(pixels[positions], spec.line_colors[cls])
        else:
            pixels[positions] = add_mask(pixels[positions], masks[cls])
    return Records(pixels, records.labels.copy(), records.source_index.copy())


def build_test_sets(test_records: Records, spec: ShortcutSpec
                    ) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Congruent (own-class shortcut), incongruent (swapped), neutral (untouched)."""
    labels = test_records.labels
    n = len(test_records)
    congruent = DatasetSplit(_inject_all(test_records, spec, labels),
                             np.ones(n, dtype=bool), "test-congruent")
    incongruent = DatasetSplit(_inject_all(test_records, spec, 1 - labels),
                               np.ones(n, dtype=bool), "test-incongruent")
    neutral = DatasetSplit(test_records.copy(), np.zeros(n, dtype=bool), "test-neutral")
    return congruent, incongruent, neutral


def write_manifest(path, splits: list[DatasetSplit]):
    """Audit CSV: source_index, class, split_role, shortcut_flag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index", "class", "split_role", "shortcut_flag"])
        for split in splits:
            for i in range(len(split)):
                writer.writerow([int(split.records.source_index[i]),
                                 int(split.records.labels[i]),
                                 split.role,
                                 int(split.shortcut_flags[i])])


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "source_index": int(row["source_index"]),
                "class": int(row["class"]),
                "split_role": row["split_role"],
                "shortcut_flag": bool(int(row["shortcut_flag"])),
            })
    if not rows:
        raise DataError(f"{path}: empty manifest")
    return rows
