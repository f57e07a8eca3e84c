"""Iris ingestion: CSV parsing, min-max scaling, stratified split."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

SPECIES = ("setosa", "versicolor", "virginica")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (n, d), scaled to [0, 1] per column
    labels: np.ndarray    # (n, classes) one-hot
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def subset(self, idx):
        return self.features[idx], self.labels[idx]


def default_iris_path() -> Path:
    return Path(str(resources.files("hetrain") / "data" / "iris.csv"))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_iris_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw features and integer class ids. Header row is optional."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    feats, classes = [], []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row]
            if lineno == 1 and not any(_is_number(c) for c in row[:4]):
                continue  # header
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            try:
                values = [float(c) for c in row[:4]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature in {row[:4]}") from None
            name = row[4].lower().removeprefix("iris-")
            if name not in SPECIES:
                raise DataError(f"{path}:{lineno}: unknown species {row[4]!r}")
            feats.append(values)
            classes.append(SPECIES.index(name))
    if not feats:
        raise DataError(f"{path}: no data rows")
    return np.array(feats), np.array(classes)


def minmax_scale(X: np.ndarray) -> np.ndarray:
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span


def stratified_split(classes: np.ndarray, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(classes):
        idx = rng.permutation(np.flatnonzero(classes == c))
        n_test = int(round(test_fraction * idx.size))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def load_iris(path=None, seed: int = 0, test_fraction: float = 0.2) -> Dataset:
    X, y = read_iris_csv(path or default_iris_path())
    train_idx, test_idx = stratified_split(y, test_fraction, seed)
    return Dataset(minmax_scale(X), np.eye(len(SPECIES))[y], train_idx, test_idx)
