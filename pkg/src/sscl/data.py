"""Dataset ingestion, standardization, fold splitting and task construction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MISSING = "?"
SCALE_FLOOR = 1e-12


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class ids.

    ``features`` may contain NaN only where the source file had the
    missing-value marker ``?``; those cells are imputed by the
    standardizer.
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-d matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DataError(f"expected {features.shape[0]} labels, got {labels.shape}")
        if np.isinf(features).any():
            raise DataError("features contain infinite values")
        if labels.size and labels.min() < 0:
            raise DataError("class ids must be non-negative")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if not self.class_names:
            n_classes = int(labels.max()) + 1 if labels.size else 0
            object.__setattr__(self, "class_names", tuple(str(c) for c in range(n_classes)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.features).any())

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.features[indices], self.labels[indices], self.name, self.class_names)


@dataclass(frozen=True)
class BinaryTask:
    dataset: Dataset
    positive_class: int
    binary_labels: np.ndarray

    @property
    def negative_class(self) -> int | None:
        """The single other class for two-class data, else None."""
        if self.dataset.n_classes == 2:
            return 1 - self.positive_class
        return None


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class FoldSplit:
    fold_count: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point_index", "fold"])
            for i, f in enumerate(self.assignments):
                writer.writerow([i, int(f)])

    @classmethod
    def from_csv(cls, path, fold_count: int | None = None) -> "FoldSplit":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assignments = np.zeros(len(rows), dtype=int)
        for row in rows:
            assignments[int(row["point_index"])] = int(row["fold"])
        if fold_count is None:
            fold_count = int(assignments.max()) + 1
        return cls(fold_count, assignments)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _resolve_label_column(label_column, header: list[str] | None, width: int) -> int:
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None:
            raise DataError(f"label column {label_column!r} given by name but the file has no header")
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not found in header {header}")
        return header.index(label_column)
    idx = int(label_column)
    if idx < 0:
        idx += width
    if not 0 <= idx < width:
        raise DataError(f"label column index {label_column} out of range for {width} columns")
    return idx


def load_csv(path, label_column=-1, name: str | None = None) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    A first row with any non-numeric cell outside the label column is taken
    as a header. Labels are mapped to dense integer ids in order of first
    appearance; ``?`` cells become NaN. With ``label_column=None`` every
    column is a feature and all labels are 0.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")

    width = len(rows[0])
    if width < (1 if label_column is None else 2):
        raise DataError(f"{path}: need at least one feature column and a label column")
    # header detection needs the label column, which may itself be a header name
    header = None
    first = [c.strip() for c in rows[0]]
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        header = first
    else:
        lab = -1 if label_column is None else _resolve_label_column(label_column, None, width)
        if any(not _is_number(c) and c != MISSING for j, c in enumerate(first) if j != lab):
            header = first
    label_idx = -1 if label_column is None else _resolve_label_column(label_column, header, width)
    body = rows[1:] if header is not None else rows
    if not body:
        raise DataError(f"{path} has a header but no data rows")

    offset = 2 if header is not None else 1
    features = np.empty((len(body), width - (label_idx >= 0)))
    raw_labels = []
    for r, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: row {r + offset} has {len(row)} columns, expected {width}")
        col = 0
        for j, cell in enumerate(row):
            cell = cell.strip()
            if j == label_idx:
                raw_labels.append(cell)
                continue
            if cell == MISSING:
                value = np.nan
            else:
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at row {r + offset}, column {j + 1}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(f"{path}: non-finite value at row {r + offset}, column {j + 1}")
            features[r, col] = value
            col += 1

    if label_idx < 0:
        return Dataset(features, np.zeros(len(body), dtype=int), name or path.stem, ("",))
    class_names: list[str] = []
    ids = {}
    labels = np.empty(len(raw_labels), dtype=int)
    for r, lab in enumerate(raw_labels):
        if lab not in ids:
            ids[lab] = len(class_names)
            class_names.append(lab)
        labels[r] = ids[lab]
    return Dataset(features, labels, name or path.stem, tuple(class_names))


def fit_standardizer(train: Dataset) -> Standardizer:
    """Per-feature mean and population standard deviation, ignoring NaN cells."""
    x = train.features
    observed = ~np.isnan(x)
    counts = observed.sum(axis=0)
    filled = np.where(observed, x, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, filled.sum(axis=0) / np.maximum(counts, 1), 0.0)
        centered = np.where(observed, x - mean, 0.0)
        sd = np.sqrt((centered ** 2).sum(axis=0) / np.maximum(counts, 1))
    scale = np.where(sd < SCALE_FLOOR, 1.0, sd)
    return Standardizer(mean, scale)


def apply_standardizer(s: Standardizer, ds: Dataset) -> Dataset:
    """Z-score ``ds`` with training statistics; missing cells become the mean (0)."""
    if ds.d != s.d:
        raise DataError(f"standardizer expects {s.d} features, dataset has {ds.d}")
    z = (ds.features - s.mean) / s.scale
    z = np.where(np.isnan(z), 0.0, z)
    return Dataset(z, ds.labels, ds.name, ds.class_names)


def kfold(n: int, fold_count: int, seed: int = 0, labels: Sequence[int] | None = None) -> FoldSplit:
    """Random balanced fold assignment.

    Passing ``labels`` stratifies: points are dealt round-robin class by class
    after shuffling, so each class is spread as evenly as possible.
    """
    if not 2 <= fold_count <= n:
        raise ValueError(f"fold_count must be in [2, {n}], got {fold_count}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        order = order[np.argsort(labels[order], kind="stable")]
    assignments = np.empty(n, dtype=int)
    assignments[order] = np.arange(n) % fold_count
    return FoldSplit(fold_count, assignments)


def binary_task(ds: Dataset, positive_class: int) -> BinaryTask:
    y = np.where(ds.labels == positive_class, 1.0, -1.0)
    return BinaryTask(ds, int(positive_class), y)


def one_vs_rest_tasks(ds: Dataset) -> list[BinaryTask]:
    """One binary task per class present in ``ds``; a single task for two-class data."""
    present = np.unique(ds.labels)
    if present.size < 2:
        raise DataError("need at least two distinct classes")
    if ds.n_classes == 2:
        return [binary_task(ds, 0)]
    return [binary_task(ds, int(c)) for c in present]


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if truth.size == 0:
        raise ValueError("accuracy of an empty prediction list is undefined")
    return float(np.mean(predicted == truth))
