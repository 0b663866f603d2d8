"""
Sample matrices held by input parties: synthetic generation, CSV ingestion
and partitioning across parties.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from conda_flake.exceptions import DataFormatError, DimensionMismatchError

log = logging.getLogger(__name__)

LABEL_COLUMN = "label"


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """n x f samples (rows) by features (columns) with optional integer labels."""

    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatchError(f"data must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(labels) != values.shape[0]:
                raise DimensionMismatchError(
                    f"{len(labels)} labels for {values.shape[0]} samples"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> "DataMatrix":
        labels = None if self.labels is None else self.labels[start:stop]
        return DataMatrix(self.values[start:stop], labels)

    @classmethod
    def concatenate(cls, parts: Sequence["DataMatrix"]) -> "DataMatrix":
        values = np.vstack([part.values for part in parts])
        if all(part.labels is not None for part in parts):
            return cls(values, np.concatenate([part.labels for part in parts]))
        return cls(values)


def gen_synthetic(
    n: int,
    f: int,
    classes: int,
    seed: int,
    separation: float = 4.0,
) -> DataMatrix:
    """
    Balanced Gaussian blobs with unit within-class covariance.

    Class means are seeded draws scaled so two means lie ``separation * sqrt(2)``
    standard deviations apart on average. Class sizes differ by at most one
    (remainder assigned round-robin) and rows are shuffled.
    """
    if classes < 1 or classes > n:
        raise DataFormatError(f"cannot draw {classes} classes from {n} samples")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, f)) * (separation / np.sqrt(f))
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    values = means[labels] + rng.standard_normal((n, f))
    return DataMatrix(values, labels)


def partition(data: DataMatrix, parties: int) -> List[DataMatrix]:
    """Split rows into ``parties`` contiguous, near-equal shares."""
    bounds = np.linspace(0, data.n_samples, parties + 1).round().astype(int)
    return [data.rows(start, stop) for start, stop in zip(bounds[:-1], bounds[1:])]


def load_csv(path: Path, label_column: Optional[str] = LABEL_COLUMN) -> DataMatrix:
    """
    Read a rectangular numeric CSV with a header row.

    ``label_column=None`` loads unlabeled data.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty")
        header = [name.strip() for name in header]
        if label_column is not None and label_column not in header:
            raise DataFormatError(f"{path} has no label column {label_column!r}")
        label_index = header.index(label_column) if label_column is not None else None

        values, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno} has {len(row)} cells, expected {len(header)}"
                )
            try:
                numbers = [float(cell) for cell in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno} has a non-numeric cell")
            for column, number in zip(header, numbers):
                if not np.isfinite(number):
                    raise DataFormatError(
                        f"{path}:{lineno} column {column!r} is not finite ({number})"
                    )
            if label_index is not None:
                label = numbers.pop(label_index)
                if label != int(label):
                    raise DataFormatError(f"{path}:{lineno} label {label} is not an integer")
                labels.append(int(label))
            values.append(numbers)

    n_features = len(header) - (1 if label_index is not None else 0)
    matrix = np.array(values, dtype=np.float64).reshape(len(values), n_features)
    log.debug("loaded %d samples with %d features from %s", *matrix.shape, path)
    return DataMatrix(matrix, labels if label_index is not None else None)


def write_csv(data: DataMatrix, path: Path, label_column: str = LABEL_COLUMN) -> Path:
    """Inverse of `load_csv`; floats are written with full round-trip precision."""
    path = Path(path)
    header = [f"x{i}" for i in range(data.n_features)]
    if data.labels is not None:
        header.append(label_column)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(data.values):
            cells = [repr(float(value)) for value in row]
            if data.labels is not None:
                cells.append(str(int(data.labels[i])))
            writer.writerow(cells)
    return path
