"""Datasets, detection results and classical quality metrics.

The positive class is always "outlier": a ``True`` flag means the record
(or cell) was flagged as an outlier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np


class OutresError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(OutresError):
    """Invalid or missing configuration."""


class DataError(OutresError):
    """Input data cannot be parsed or violates a precondition."""


class DimensionError(DataError, ValueError):
    """Array lengths or shapes do not agree."""


class RangeError(OutresError, ValueError):
    """A size or count parameter lies outside its feasible range."""


class NumericalError(OutresError):
    """A numerical routine failed to produce a usable result."""


class DegenerateInputWarning(UserWarning):
    """A detector received input on which its rule is undefined (zero scale)."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An N x V matrix of finite reals with optional ground-truth labels."""

    values: np.ndarray
    column_names: tuple[str, ...]
    ground_truth: Optional[np.ndarray] = None
    id: str = "dataset"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"values must be a non-empty N x V matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {i}, column {j}")
        names = tuple(self.column_names) if self.column_names else tuple(f"x{j}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DimensionError(f"{len(names)} column names for {values.shape[1]} columns")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "column_names", names)
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=bool)
            if gt.shape != (values.shape[0],):
                raise DimensionError(f"ground_truth has {gt.size} entries for {values.shape[0]} records")
            object.__setattr__(self, "ground_truth", _readonly(gt))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def v(self) -> int:
        return self.values.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        gt = None if self.ground_truth is None else self.ground_truth[idx]
        return Dataset(self.values[idx], self.column_names, gt, self.id)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class RatePanel:
    """Sensitivity ``alpha``, specificity ``beta`` and prevalence ``gamma``."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise RangeError(f"{name}={val!r} is not a probability")


@dataclass(frozen=True, eq=False)
class DetectionResult:
    """Record-level (and optionally cell-level) flags produced by one method.

    ``scope`` is ``None`` for a whole-dataset run, otherwise the
    :class:`~outres.samplers.SampleIndex` the detector was restricted to; in
    that case ``record_flags[i]`` refers to row ``scope.indices[i]``.
    """

    method: str
    params: Mapping[str, Any]
    record_flags: np.ndarray
    cell_flags: Optional[np.ndarray] = None
    dataset_id: str = "dataset"
    scope: Any = None
    seed: Optional[int] = None
    scores: Optional[np.ndarray] = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        flags = np.asarray(self.record_flags, dtype=bool)
        if flags.ndim != 1:
            raise DimensionError("record_flags must be a vector")
        if self.scope is not None and len(self.scope.indices) != flags.size:
            raise DimensionError(f"{flags.size} flags for a scope of {len(self.scope.indices)} records")
        object.__setattr__(self, "record_flags", _readonly(flags))
        if self.cell_flags is not None:
            cells = np.asarray(self.cell_flags, dtype=bool)
            if cells.shape[0] != flags.size:
                raise DimensionError("cell_flags and record_flags disagree on the record count")
            rule = dict(self.params).get("aggregation", "any")
            if not np.array_equal(aggregate_cells(cells, rule), flags):
                raise DataError(f"record_flags are not the {rule!r} aggregation of cell_flags")
            object.__setattr__(self, "cell_flags", _readonly(cells))
        if self.scores is not None:
            object.__setattr__(self, "scores", _readonly(np.asarray(self.scores, dtype=float)))
        object.__setattr__(self, "params", dict(self.params))

    @property
    def row_indices(self) -> np.ndarray:
        """Dataset row index of each entry of ``record_flags``."""
        if self.scope is None:
            return np.arange(self.record_flags.size)
        return np.asarray(self.scope.indices)

    @property
    def n_flagged(self) -> int:
        return int(self.record_flags.sum())


def load_csv(path, gt_column: Optional[str] = None, dataset_id: Optional[str] = None) -> Dataset:
    """Read a headed, comma-delimited numeric CSV into a :class:`Dataset`.

    Lines starting with ``#`` are treated as comments. If ``gt_column`` is
    given, that column must hold 0/1 values and becomes ``ground_truth``.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    gt_pos = None
    if gt_column is not None:
        if gt_column not in header:
            raise ConfigError(f"{path}: ground-truth column {gt_column!r} not found in header {header}")
        gt_pos = header.index(gt_column)
    value_cols = [j for j in range(len(header)) if j != gt_pos]
    values = np.empty((len(body), len(value_cols)))
    gt = np.empty(len(body), dtype=bool) if gt_pos is not None else None
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        for out_j, j in enumerate(value_cols):
            try:
                x = float(row[j])
            except ValueError:
                raise DataError(f"{path}: cannot parse {row[j]!r} at row {i}, column {header[j]!r}") from None
            if not math.isfinite(x):
                raise DataError(f"{path}: non-finite value {row[j]!r} at row {i}, column {header[j]!r}")
            values[i, out_j] = x
        if gt is not None:
            cell = row[gt_pos].strip().lower()
            if cell in ("1", "1.0", "true"):
                gt[i] = True
            elif cell in ("0", "0.0", "false"):
                gt[i] = False
            else:
                raise DataError(f"{path}: label {row[gt_pos]!r} at row {i} is not 0/1")
    if dataset_id is None:
        dataset_id = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return Dataset(values, tuple(header[j] for j in value_cols), gt, dataset_id)


def write_csv(dataset: Dataset, path, gt_column: str = "is_outlier", comments: Sequence[str] = ()) -> None:
    """Write a dataset so that :func:`load_csv` reproduces it bit-exactly."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        header = list(dataset.column_names)
        if dataset.ground_truth is not None:
            header.append(gt_column)
        w.writerow(header)
        for i in range(dataset.n):
            # repr() of a float round-trips exactly
            row = [repr(float(x)) for x in dataset.values[i]]
            if dataset.ground_truth is not None:
                row.append("1" if dataset.ground_truth[i] else "0")
            w.writerow(row)


def _as_flags(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=bool)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be a vector")
    return a


def confusion(pred, truth) -> ConfusionCounts:
    pred = _as_flags(pred, "pred")
    truth = _as_flags(truth, "truth")
    if pred.size != truth.size:
        raise DimensionError(f"pred has {pred.size} entries, truth has {truth.size}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=pred.size - tp - fp - fn)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def rates(c: ConfusionCounts) -> dict[str, Optional[float]]:
    """Sensitivity, specificity, precision, recall and F1.

    A metric whose denominator is zero is reported as ``None``.
    """
    sens = _ratio(c.tp, c.tp + c.fn)
    prec = _ratio(c.tp, c.tp + c.fp)
    if sens is None or prec is None:
        f1 = None
    elif sens + prec == 0:
        f1 = 0.0
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return {
        "sensitivity": sens,
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "precision": prec,
        "recall": sens,
        "f1": f1,
    }


AGGREGATION_RULES = ("any", "majority")


def aggregate_cells(cell_flags, rule: str = "any") -> np.ndarray:
    """Collapse per-cell flags to per-record flags.

    ``any`` flags a record when at least one of its cells is flagged;
    ``majority`` when strictly more than half of them are.
    """
    cells = np.asarray(cell_flags, dtype=bool)
    if cells.ndim == 1:
        cells = cells[:, None]
    if cells.ndim != 2 or cells.shape[0] < 1:
        raise DimensionError(f"cell_flags must be an N x V matrix, got shape {cells.shape}")
    if rule == "any":
        return cells.any(axis=1)
    if rule == "majority":
        return 2 * cells.sum(axis=1) > cells.shape[1]
    raise ConfigError(f"unknown aggregation rule {rule!r}; expected one of {AGGREGATION_RULES}")
