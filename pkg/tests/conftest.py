import numpy as np
import pytest

from shortcutiw.data import DatasetSplit, Records
from shortcutiw.synthdata import generate_records


@pytest.fixture(scope="session")
def pair_records():
    """Small two-class image set (classes 1 and 6, remapped to 0/1)."""
    rec = generate_records((1, 6), 200, seed=42)
    rec.labels = (rec.labels == 6).astype(np.int64)
    return rec


@pytest.fixture()
def tiny_train(pair_records) -> DatasetSplit:
    return DatasetSplit(pair_records.take(np.arange(300)),
                        np.zeros(300, dtype=bool), "train")


def make_records(n: int, seed: int = 0, num_classes: int = 2) -> Records:
    """Random-noise records, cheap to build for format-level tests."""
    rng = np.random.default_rng(seed)
    return Records(
        rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8) if n else np.zeros((0, 3, 32, 32), np.uint8),
        rng.integers(0, num_classes, size=n).astype(np.int64),
        np.arange(n, dtype=np.int64),
    )
