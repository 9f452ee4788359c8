"""Importance weights and the weighted mini-batch loss.

An item's weight is its probability of misclassification under the producer
network: w = 1 - p(true class | image).  Within each mini-batch the raw
weights are normalized to sum to one before multiplying the per-item losses.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

logger = logging.getLogger(__name__)


class ZeroWeightBatch(ValueError):
    """Every raw weight in the batch is zero."""


def importance_weights(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """w_i = 1 - p(y_i | x_i), one weight per row of probs."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    return 1.0 - probs[np.arange(len(labels)), labels].astype(np.float64)


def normalize_batch_iws(raw) -> np.ndarray:
    """Divide each raw weight by the batch sum; the result sums to 1."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ValueError(f"weights must be 1-d, got shape {raw.shape}")
    if (raw < 0).any():
        raise ValueError("negative importance weight; upstream invariant breached")
    total = raw.sum()
    if total == 0:
        raise ZeroWeightBatch(f"all {raw.size} weights in the batch are zero")
    return raw / total


def weighted_batch_loss(per_item_losses: Tensor, batch_weights) -> Tensor:
    """Sum of per-item losses times batch-normalized weights.

    Differentiable through the losses only; weights are constants.  A
    zero-sum weight batch falls back to uniform weights with a warning so
    the epoch keeps its length.
    """
    weights = np.asarray(batch_weights, dtype=np.float64)
    (n,) = per_item_losses.shape
    if weights.shape != (n,):
        raise ValueError(f"{n} losses but {weights.shape} weights")
    try:
        normalized = normalize_batch_iws(weights)
    except ZeroWeightBatch:
        logger.warning("zero-sum weight batch (%d items); using uniform weights", n)
        normalized = np.full(n, 1.0 / n)
    const = Tensor(normalized.astype(per_item_losses.dtype))
    return ag.tsum(ag.mul(per_item_losses, const))


@dataclass
class IwTable:
    """Per-training-item weights plus provenance."""

    index: np.ndarray           # (N,) int64, source_index of each item
    labels: np.ndarray          # (N,) int64
    shortcut_flags: np.ndarray  # (N,) bool
    weights: np.ndarray         # (N,) float64 in [0,1]
    producer: str               # "LCN" | "HCN"
    producer_checkpoint_id: str = ""

    def __post_init__(self):
        n = len(self.index)
        if not (len(self.labels) == len(self.shortcut_flags) == len(self.weights) == n):
            raise ValueError("IwTable columns must share one length")
        if len(np.unique(self.index)) != n:
            raise ValueError("every training index must appear exactly once")
        if (self.weights < 0).any() or (self.weights > 1).any():
            raise ValueError("importance weights must lie in [0,1]")

    def __len__(self):
        return len(self.index)


def write_iw_table(path, table: IwTable):
    """CSV with weights printed to 9 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "class", "shortcut_flag", "weight"])
        for i in range(len(table)):
            writer.writerow([int(table.index[i]), int(table.labels[i]),
                             int(table.shortcut_flags[i]), f"{table.weights[i]:.9g}"])


def read_iw_table(path, producer: str = "unknown") -> IwTable:
    index, labels, flags, weights = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            index.append(int(row["index"]))
            labels.append(int(row["class"]))
            flags.append(bool(int(row["shortcut_flag"])))
            weights.append(float(row["weight"]))
    if not index:
        raise ValueError(f"{path}: empty importance-weight file")
    return IwTable(np.asarray(index, dtype=np.int64), np.asarray(labels, dtype=np.int64),
                   np.asarray(flags, dtype=bool), np.asarray(weights, dtype=np.float64),
                   producer=producer)
