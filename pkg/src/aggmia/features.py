"""Fixed-length statistical features of aggregate windows.

Every ROI row of an aggregate contributes the same seven statistics over
the time axis, in this order: variance, min, max, median, mean, std, sum
(population convention for variance and std). Column names are
"<roi>:<stat>" and the layout is roi-major, stat-minor.

Also here: recursive feature elimination driven by the package's own
linear classifier, and the mean-0/variance-1 scaling used by the MLP.
Features are always computed after any perturbation of the aggregate,
never before.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import train_lr

__all__ = [
    "FeatureError",
    "FeatureMatrix",
    "FeatureSelection",
    "STAT_NAMES",
    "feature_names",
    "extract",
    "rfe",
    "standardize",
    "apply_standardization",
]

STAT_NAMES = ("variance", "min", "max", "median", "mean", "std", "sum")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """Rectangular named-column matrix with aligned 0/1 labels."""

    rows: np.ndarray
    columns: tuple
    labels: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "labels", labels)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise FeatureError("rows do not match column names")
        if len(set(self.columns)) != len(self.columns):
            raise FeatureError("duplicate column names")
        if labels.shape != (rows.shape[0],):
            raise FeatureError("labels do not align with rows")
        if not np.isfinite(rows).all():
            raise FeatureError("non-finite feature values")
        if not np.isin(labels, (0.0, 1.0)).all():
            raise FeatureError("labels must be 0/1")
        rows.setflags(write=False)
        labels.setflags(write=False)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise FeatureError(f"no such column: {name}") from None

    def select(self, names) -> "FeatureMatrix":
        idx = [self.column_index(n) for n in names]
        return FeatureMatrix(self.rows[:, idx], tuple(names), self.labels)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("label," + ",".join(self.columns) + "\n")
            for label, row in zip(self.labels, self.rows):
                cells = ",".join(repr(float(v)) for v in row)
                fh.write(f"{float(label)!r},{cells}\n")


@dataclass(frozen=True)
class FeatureSelection:
    """Ordered column subset; deliberately holds names only, no row data."""

    kept_columns: tuple
    target_count: int

    def __post_init__(self):
        object.__setattr__(self, "kept_columns", tuple(self.kept_columns))
        if len(self.kept_columns) != self.target_count:
            raise FeatureError("kept column count disagrees with target")


def feature_names(roi_count: int) -> tuple:
    return tuple(
        f"{roi}:{stat}" for roi in range(roi_count) for stat in STAT_NAMES
    )


def _series_values(sample):
    """Accept (series, label) pairs or objects with .series and .label."""
    if isinstance(sample, tuple) and len(sample) == 2:
        series, label = sample
    else:
        series, label = sample.series, sample.label
    values = series.values if hasattr(series, "values") else series
    return np.asarray(values, dtype=np.float64), float(label)


def extract(samples) -> FeatureMatrix:
    """Seven statistics per ROI over each sample's time axis."""
    if not samples:
        raise FeatureError("no samples")
    rows, labels, shape = [], [], None
    for sample in samples:
        values, label = _series_values(sample)
        if values.ndim != 2:
            raise FeatureError("sample series must be 2-D (roi x slot)")
        if shape is None:
            shape = values.shape
        elif values.shape != shape:
            raise FeatureError(
                f"ragged samples: {values.shape} after {shape}"
            )
        stats = np.column_stack(
            [
                values.var(axis=1),
                values.min(axis=1),
                values.max(axis=1),
                np.median(values, axis=1),
                values.mean(axis=1),
                values.std(axis=1),
                values.sum(axis=1),
            ]
        )
        rows.append(stats.ravel())
        labels.append(label)
    return FeatureMatrix(np.array(rows), feature_names(shape[0]), np.array(labels))


def standardize(matrix):
    """Column-wise mean 0 / variance 1; constant columns map to zero and
    their std is recorded as 1 so the transform stays invertible."""
    bare = isinstance(matrix, np.ndarray)
    rows = matrix if bare else matrix.rows
    if rows.size == 0:
        raise FeatureError("empty matrix")
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    scaled = (rows - means) / stds
    if bare:
        return scaled, means, stds
    return FeatureMatrix(scaled, matrix.columns, matrix.labels), means, stds


def apply_standardization(matrix, means, stds):
    """Transform held-out rows with parameters fitted on training rows."""
    if isinstance(matrix, np.ndarray):
        return (matrix - means) / stds
    return FeatureMatrix(
        (matrix.rows - means) / stds, matrix.columns, matrix.labels
    )


def rfe(matrix: FeatureMatrix, target_count: int) -> FeatureSelection:
    """Recursive elimination: fit the linear classifier on a standardized
    copy, drop the lowest-|coefficient| 10% (at least one column) per
    round until target_count remain. Fully deterministic."""
    n_cols = len(matrix.columns)
    if target_count < 1:
        raise FeatureError("target_count must be >= 1")
    if target_count > n_cols:
        raise FeatureError(
            f"target_count {target_count} exceeds {n_cols} columns"
        )
    kept = list(range(n_cols))
    while len(kept) > target_count:
        sub = matrix.rows[:, kept]
        scaled, _, _ = standardize(np.array(sub))
        model = train_lr(scaled, matrix.labels, tol=1e-3, max_iter=100)
        rank = np.abs(model.params["w"])
        drop_n = min(max(1, len(kept) // 10), len(kept) - target_count)
        doomed = set(np.argsort(rank, kind="stable")[:drop_n].tolist())
        kept = [c for i, c in enumerate(kept) if i not in doomed]
    return FeatureSelection(
        kept_columns=tuple(matrix.columns[i] for i in kept),
        target_count=target_count,
    )
