"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np


def check_images(X) -> np.ndarray:
    """Require a finite float (N, C, H, W) batch; returns float32."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"expected image batch (N, C, H, W), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float32)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite pixel values")
    return X.astype(np.float32, copy=False)


def check_labels(y, classes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (encoded labels in 0..K-1, sorted class values).

    When `classes` is given, labels are encoded against it and must all be
    members; otherwise classes are inferred from y.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if classes is None:
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError(f"need at least 2 classes, got {classes!r}")
    encoded = np.searchsorted(classes, y)
    valid = (encoded < len(classes)) & (classes[np.minimum(encoded, len(classes) - 1)] == y)
    if not valid.all():
        raise ValueError(f"labels outside known classes {classes!r}")
    return encoded.astype(np.int64), classes


def check_sample_weight(sample_weight, n: int) -> np.ndarray:
    """Non-negative float64 weights, one per item; None means all ones."""
    if sample_weight is None:
        return np.ones(n, dtype=np.float64)
    w = np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"sample_weight shape {w.shape} does not match {n} items")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite sample weights")
    if (w < 0).any():
        raise ValueError("negative sample weights")
    return w
