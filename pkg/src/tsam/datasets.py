"""Synthetic Gaussian-blob classification data and label-noise injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "SyntheticDataset",
    "blob_centers",
    "make_synthetic_classification",
    "inject_label_noise",
    "write_split_csv",
    "read_split_csv",
]

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class SyntheticDataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    classes: int
    clean_y_train: np.ndarray
    noise_fraction: float = 0.0

    def split(self, name: str):
        if name == "train":
            return self.X_train, self.y_train
        if name == "validation":
            return self.X_val, self.y_val
        if name == "test":
            return self.X_test, self.y_test
        raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")

    @property
    def n_train(self) -> int:
        return len(self.y_train)

    def equals(self, other: "SyntheticDataset") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("X_train", "y_train", "X_val", "y_val", "X_test", "y_test", "clean_y_train")
        ) and self.classes == other.classes and self.noise_fraction == other.noise_fraction


def blob_centers(d: int, classes: int, scale: float = 2.0) -> np.ndarray:
    """Fixed class centers; corners of a square when d=2 and classes=4."""
    if d == 2 and classes == 4:
        return scale * np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]) / np.sqrt(2)
    # deliberately independent of the data seed
    rng = np.random.default_rng(12345)
    c = rng.normal(size=(classes, d))
    return scale * c / np.linalg.norm(c, axis=1, keepdims=True)


def make_synthetic_classification(
    n: int = 1000,
    d: int = 2,
    classes: int = 4,
    seed: int = 0,
    n_val: int = 200,
    n_test: int = 500,
    spread: float = 1.0,
) -> SyntheticDataset:
    """Class-conditional isotropic Gaussian blobs around :func:`blob_centers`."""
    if min(n, d, classes) < 1 or classes < 2:
        raise ValueError("need n, d >= 1 and classes >= 2")
    rng = np.random.default_rng(seed)
    centers = blob_centers(d, classes)

    def draw(m):
        y = rng.integers(0, classes, size=m)
        X = centers[y] + spread * rng.normal(size=(m, d))
        return X, y

    X_tr, y_tr = draw(n)
    X_va, y_va = draw(n_val)
    X_te, y_te = draw(n_test)
    return SyntheticDataset(X_tr, y_tr, X_va, y_va, X_te, y_te, classes, y_tr.copy())


def inject_label_noise(dataset: SyntheticDataset, fraction: float, seed: int = 0) -> SyntheticDataset:
    """Flip exactly floor(fraction * n_train) training labels to a different class.

    Validation and test labels are left untouched. The returned dataset keeps
    the original labels in ``clean_y_train``.
    """
    if not 0 <= fraction < 1:
        raise ValueError(f"noise fraction must lie in [0, 1), got {fraction}")
    n = dataset.n_train
    k = int(np.floor(fraction * n))
    if k == 0:
        return dataset
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    y = dataset.y_train.copy()
    y[idx] = (y[idx] + rng.integers(1, dataset.classes, size=k)) % dataset.classes
    return replace(dataset, y_train=y, noise_fraction=fraction)


def write_split_csv(dataset: SyntheticDataset, split: str, path) -> Path:
    """Write one split as ``x0,...,x{d-1},label`` with a header row."""
    X, y = dataset.split(split)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


def read_split_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body])
    y = np.array([int(r[-1]) for r in body])
    return X, y
