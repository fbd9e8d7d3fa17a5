"""Datasets for classification objectives.

Inputs live in the unit ball: ingestion rescales every example by the
largest row norm found, and the divisor is stored so the original scale
can be recovered.  Labels are integer class indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["Dataset", "load_csv", "save_csv", "make_blobs"]

_NORM_SLACK = 1e-9


@dataclass
class Dataset:
    inputs: np.ndarray        # (N, d0) float64, row norms <= 1
    labels: np.ndarray        # (N,) integer class indices in [0, num_classes)
    num_classes: int
    scale_factor: float = 1.0  # divisor applied to raw inputs at ingestion

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be (N, d0), got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be a vector with one entry per input row")
        if self.inputs.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite entries")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        self.labels = self.labels.astype(np.int64)
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )
        norms = np.linalg.norm(self.inputs, axis=1)
        if norms.max() > 1.0 + _NORM_SLACK:
            raise ValueError(
                f"input row norms must be <= 1, max is {norms.max():.6g}; "
                "rescale at ingestion"
            )

    @property
    def num_examples(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def load_csv(path, label_column: str = "label") -> Dataset:
    """Read a dataset from CSV with a header row.

    The named label column holds class indices; every other column is a
    feature, kept in file order.  All inputs are divided by the largest
    row norm in the file (so the max row norm becomes exactly 1) and the
    divisor is recorded as ``scale_factor``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file, expected a header row")
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r} in header")
        label_idx = header.index(label_column)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    want = len(header)
    labels = np.empty(len(rows), dtype=np.int64)
    feats = np.empty((len(rows), want - 1), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != want:
            raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, expected {want}")
        raw_label = float(row[label_idx])
        if raw_label != int(raw_label):
            raise ValueError(f"{path}: row {i + 2} label {row[label_idx]!r} is not an integer")
        labels[i] = int(raw_label)
        feats[i] = [float(v) for j, v in enumerate(row) if j != label_idx]
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"{path}: non-finite feature values")
    if labels.min() < 0:
        raise ValueError(f"{path}: negative label {labels.min()}")
    max_norm = float(np.linalg.norm(feats, axis=1).max())
    if max_norm > 0:
        feats = feats / max_norm
        scale = max_norm
    else:
        scale = 1.0
    return Dataset(feats, labels, num_classes=int(labels.max()) + 1, scale_factor=scale)


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write ``label,x0,x1,...`` rows; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label_column] + [f"x{j}" for j in range(dataset.dim)])
        for y, x in zip(dataset.labels, dataset.inputs):
            writer.writerow([int(y)] + [format(v, ".17g") for v in x])


def make_blobs(num_classes: int, dim: int, per_class: int, seed: int,
               separation: float = 3.0) -> Dataset:
    """Gaussian class blobs, rescaled so the max row norm is exactly 1.

    Class centers are unit vectors; the cluster standard deviation is
    1/separation.  Identical arguments give byte-identical data.
    """
    if num_classes < 2 or dim < 1 or per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 1, per_class >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0DA7A]))
    centers = rng.normal(size=(num_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    sigma = 1.0 / separation
    points = np.repeat(centers, per_class, axis=0)
    points = points + sigma * rng.normal(size=points.shape)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    max_norm = float(np.linalg.norm(points, axis=1).max())
    points /= max_norm
    return Dataset(points, labels, num_classes=num_classes, scale_factor=max_norm)
