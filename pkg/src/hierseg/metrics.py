"""Confusion-matrix accumulation and per-class / mean IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core import ClassTaxonomy, LabelMap, _freeze
from .errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K grid of int64 counts; cell [g][p] = pixels with truth g predicted p.

    Ground-truth pixels carrying the ignore index contribute to no cell.
    Matrices merge by cell-wise addition (associative and commutative), so they
    can be accumulated per-thread and combined afterwards.
    """

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.dtype != np.int64:
            raise ValueError("ConfusionMatrix.counts must be a square int64 array")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", _freeze(arr))

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)


def merge_confusions(matrices: Iterable[ConfusionMatrix], num_classes: int) -> ConfusionMatrix:
    total = ConfusionMatrix.zeros(num_classes)
    for m in matrices:
        total = total.merged(m)
    return total


def accumulate_confusion(
    pred: LabelMap,
    gt: LabelMap,
    taxonomy: ClassTaxonomy,
    acc: ConfusionMatrix | None = None,
) -> ConfusionMatrix:
    """Return ``acc`` plus the per-pixel counts of one prediction/truth pair."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"prediction {pred.width}x{pred.height} and ground truth "
            f"{gt.width}x{gt.height} dimensions differ"
        )
    k = taxonomy.num_classes
    if acc is None:
        acc = ConfusionMatrix.zeros(k)
    elif acc.num_classes != k:
        raise ValueError("accumulator size does not match the taxonomy")
    keep = gt.values != taxonomy.ignore_index
    g = gt.values[keep].astype(np.int64)
    p = pred.values[keep].astype(np.int64)
    if g.size and (g.max() >= k or p.max() >= k):
        raise DataError("label values exceed the taxonomy class count")
    delta = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(acc.counts + delta)


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU for classes with nonzero union, plus the mean over eval classes.

    Classes with zero union are undefined: they are absent from ``per_class`` and
    excluded from the mean. ``mean_iou`` is NaN when no eval class is defined.
    """

    per_class: Mapping[int, float]
    mean_iou: float
    evaluated_classes: tuple[int, ...]

    def to_json_dict(self, taxonomy: ClassTaxonomy | None = None) -> dict:
        doc: dict = {
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "mean_iou": self.mean_iou,
            "evaluated_classes": list(self.evaluated_classes),
        }
        if taxonomy is not None:
            doc["class_names"] = {str(i): n for i, n in taxonomy.classes}
        return doc


def iou_from_confusion(matrix: ConfusionMatrix, taxonomy: ClassTaxonomy) -> IouReport:
    """IoU(c) = diag / (row + col - diag); mean over defined eval classes."""
    if not taxonomy.eval_classes:
        raise ValueError("taxonomy has no eval classes")
    counts = matrix.counts
    diag = counts.diagonal()
    union = counts.sum(axis=1) + counts.sum(axis=0) - diag
    per_class = {
        int(c): float(diag[c] / union[c]) for c in range(matrix.num_classes) if union[c] > 0
    }
    evaluated = tuple(sorted(c for c in taxonomy.eval_classes if c in per_class))
    if evaluated:
        mean = float(sum(per_class[c] for c in evaluated) / len(evaluated))
    else:
        mean = math.nan
    return IouReport(per_class=per_class, mean_iou=mean, evaluated_classes=evaluated)


def iou_csv_header(taxonomy: ClassTaxonomy) -> list[str]:
    """Column labels: one per eval class (capitalized name) plus Average."""
    names = taxonomy.names
    return [names[c].capitalize() for c in sorted(taxonomy.eval_classes)] + ["Average"]


def iou_csv_values(report: IouReport, taxonomy: ClassTaxonomy) -> list[str]:
    """Row values aligned with :func:`iou_csv_header`; undefined cells are empty."""
    cells = []
    for c in sorted(taxonomy.eval_classes):
        cells.append(f"{report.per_class[c]:.6f}" if c in report.per_class else "")
    cells.append("" if math.isnan(report.mean_iou) else f"{report.mean_iou:.6f}")
    return cells
