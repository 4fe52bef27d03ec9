"""
Patch-grid scoring of match results.

The scene is tiled into non-overlapping square patches (edge patches are
truncated, never dropped).  Patches touching the reference box are
positives; patches holding a selected match location are predictions.
Confusion counts and the five summary metrics are computed per case or
micro-averaged over several cases.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .cluster import Rect
from .match import MatchSet, best_match

__all__ = [
    "PatchGrid",
    "ConfusionCounts",
    "EvalMetrics",
    "METRIC_COLUMNS",
    "build_grid",
    "positive_patches",
    "predicted_patches",
    "confusion",
    "metrics",
    "format_table",
]

METRIC_COLUMNS = ("Accuracy", "Precision", "Recall", "Specificity", "NPV")
MODES = ("all-selected", "top1")


@dataclass(frozen=True)
class PatchGrid:
    width: int
    height: int
    patch_size: int
    cols: int
    rows: int

    @property
    def n_patches(self) -> int:
        return self.cols * self.rows

    def patch(self, index: int) -> Rect:
        row, col = divmod(index, self.cols)
        x0, y0 = col * self.patch_size, row * self.patch_size
        return Rect(x0, y0, min(self.patch_size, self.width - x0), min(self.patch_size, self.height - y0))

    @property
    def patches(self) -> list[Rect]:
        return [self.patch(i) for i in range(self.n_patches)]

    def index_of(self, x: float, y: float) -> int:
        """Patch holding pixel ``(x, y)``; intervals are half-open."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"location ({x}, {y}) outside {self.width}x{self.height} scene")
        return int(y // self.patch_size) * self.cols + int(x // self.patch_size)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class EvalMetrics:
    """Summary metrics; ``None`` marks a metric whose denominator is zero."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    specificity: float | None
    npv: float | None

    def as_tuple(self) -> tuple[float | None, ...]:
        return (self.accuracy, self.precision, self.recall, self.specificity, self.npv)

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self, label: str, digits: int = 2) -> str:
        cells = ["n/a" if v is None else f"{v:.{digits}f}" for v in self.as_tuple()]
        return "\t".join([label, *cells])


def build_grid(scene_w: int, scene_h: int, patch_size: int = 300) -> PatchGrid:
    if patch_size < 1 or scene_w < 1 or scene_h < 1:
        raise ValueError("patch_size and scene dims must be >= 1")
    return PatchGrid(
        width=scene_w,
        height=scene_h,
        patch_size=patch_size,
        cols=math.ceil(scene_w / patch_size),
        rows=math.ceil(scene_h / patch_size),
    )


def positive_patches(grid: PatchGrid, reference_box: Rect) -> set[int]:
    """Patches sharing at least one pixel with ``reference_box``."""
    reference_box = Rect(*reference_box)
    s = grid.patch_size
    col_lo = max(0, reference_box.x0 // s)
    col_hi = min(grid.cols - 1, (reference_box.x1 - 1) // s)
    row_lo = max(0, reference_box.y0 // s)
    row_hi = min(grid.rows - 1, (reference_box.y1 - 1) // s)
    return {
        row * grid.cols + col
        for row in range(row_lo, row_hi + 1)
        for col in range(col_lo, col_hi + 1)
        if grid.patch(row * grid.cols + col).intersects(reference_box)
    }


def predicted_patches(grid: PatchGrid, match_set: MatchSet, mode: str = "all-selected") -> set[int]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not match_set.locations:
        return set()
    if mode == "top1":
        top = best_match(match_set)
        return {grid.index_of(top.x, top.y)}
    return {grid.index_of(m.x, m.y) for m in match_set.locations}


def confusion(grid: PatchGrid, predicted: Iterable[int], positive: Iterable[int]) -> ConfusionCounts:
    predicted, positive = set(predicted), set(positive)
    n = grid.n_patches
    if any(not 0 <= i < n for i in predicted | positive):
        raise ValueError("patch index outside the grid")
    tp = len(predicted & positive)
    fp = len(predicted - positive)
    fn = len(positive - predicted)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=n - tp - fp - fn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(counts: ConfusionCounts | None, pooled: Sequence[ConfusionCounts] | None = None) -> EvalMetrics:
    """Accuracy, precision, recall, specificity and NPV.

    With ``pooled``, the counts of every case (plus ``counts`` when given)
    are summed before dividing, i.e. micro-averaging.
    """
    total = counts if counts is not None else ConfusionCounts()
    for c in pooled or ():
        total = total + c
    tp, fp, fn, tn = total.tp, total.fp, total.fn, total.tn
    return EvalMetrics(
        accuracy=_ratio(tp + tn, total.total),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        npv=_ratio(tn, tn + fn),
    )


def format_table(rows: Sequence[tuple[str, EvalMetrics]], digits: int = 2) -> str:
    """Tab-separated table: a label column then the five metric columns."""
    lines = ["\t".join(["View", *METRIC_COLUMNS])]
    lines.extend(m.row(label, digits) for label, m in rows)
    return "\n".join(lines)
