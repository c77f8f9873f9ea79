import numpy as np
import pytest

from fcmesh.data import Dataset


@pytest.fixture
def small_dataset():
    """12 scans x 6 voxels, 2 classes, both phases, 4 trials of 3 scans."""
    rng = np.random.default_rng(42)
    signals = rng.normal(size=(12, 6))
    coords = rng.uniform(0, 10, size=(6, 3))
    labels = np.array([1, 1, 1, 2, 2, 2, 1, 1, 1, 2, 2, 2])
    phase = np.array([0] * 6 + [1] * 6, dtype=np.uint8)
    trials = np.column_stack([np.repeat([1, 2, 3, 4], 3), np.tile([0, 1, 2], 4)])
    return Dataset(signals, coords, labels, phase, trials)


def two_blob_coords(n_per_blob=50, separation=20.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, (n_per_blob, 3))
    b = rng.normal(0, 1, (n_per_blob, 3)) + np.array([separation, 0, 0])
    coords = np.vstack([a, b])
    truth = np.array([0] * n_per_blob + [1] * n_per_blob)
    return coords, truth


def adjusted_rand_index(a, b):
    """Brute-force ARI from the pair-counting contingency table."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    classes_a = np.unique(a)
    classes_b = np.unique(b)
    table = np.array(
        [[np.sum((a == ca) & (b == cb)) for cb in classes_b] for ca in classes_a]
    )

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)
