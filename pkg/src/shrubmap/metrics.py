"""Precision/recall/F1 scoring and the six-class shrub size schema."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import NonPositiveArea
from .matching import (
    ConfusionCounts,
    Detection,
    GroundTruth,
    MatchConfig,
    evaluate_scene,
)

logger = logging.getLogger(__name__)


class SizeClass(Enum):
    """Shrub size classes over half-open area ranges [low, high) in m2.

    The boundaries are fixed constants (the canopy-area quantiles of the
    reference photo-interpreted population), not recomputed from data.
    """

    XS = (0.13, 1.72)
    S = (1.72, 3.62)
    M = (3.62, 9.08)
    L = (9.08, 20.82)
    XL = (20.82, 41.06)
    XXL = (41.06, math.inf)

    @property
    def low(self) -> float:
        return self.value[0]

    @property
    def high(self) -> float:
        return self.value[1]


SIZE_CLASS_ORDER: tuple[SizeClass, ...] = tuple(SizeClass)


def classify_size(area_m2: float) -> SizeClass:
    """Map a positive area to its size class.

    Boundaries are half-open: 1.72 m2 is S, not XS. Areas below the XS
    lower bound (0.13 m2, the smallest annotated shrub) still classify
    as XS but are flagged in the log.

    Raises:
        NonPositiveArea: for zero or negative areas.
    """
    if not area_m2 > 0.0:
        raise NonPositiveArea(f"area must be positive, got {area_m2}")
    if area_m2 < SizeClass.XS.low:
        logger.debug("area %.4f m2 below the XS lower bound, classifying as XS", area_m2)
        return SizeClass.XS
    for cls in SIZE_CLASS_ORDER:
        if cls.low <= area_m2 < cls.high:
            return cls
    return SizeClass.XXL


@dataclass(frozen=True)
class ScoreTriple:
    """Precision, recall and F1 as percentages in [0, 100].

    Values are kept at full precision; round only when presenting.
    Each score is defined as 0 when its denominator is 0.
    """

    precision: float
    recall: float
    f1: float


def precision_recall_f1(c: ConfusionCounts) -> ScoreTriple:
    """Percent precision, recall and F1 from confusion counts."""
    precision = 100.0 * c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else 0.0
    recall = 100.0 * c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return ScoreTriple(precision, recall, f1)


@dataclass
class SizeEvaluation:
    """Confusion counts stratified by size class, plus the global totals.

    Per-class counts always sum to ``total`` exactly. Classes with no
    instances are absent from ``counts_by_class``.
    """

    counts_by_class: dict[SizeClass, ConfusionCounts]
    total: ConfusionCounts

    def scores_by_class(self) -> dict[SizeClass, ScoreTriple]:
        return {cls: precision_recall_f1(c) for cls, c in self.counts_by_class.items()}

    def total_scores(self) -> ScoreTriple:
        return precision_recall_f1(self.total)


def evaluate_by_size(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    cfg: MatchConfig,
) -> SizeEvaluation:
    """Evaluate a scene and attribute each outcome to a size class.

    Ground truths are classed by their own area. A detection inherits
    the class of its matched labels, choosing by majority intersection
    area (ties go to the smaller class); a detection matching nothing is
    classed by its own area. This attribution rule for FP detections is
    a toolkit convention, not something the metric definitions fix.
    """
    result = evaluate_scene(dets, gts, cfg)
    gt_class = {g.id: classify_size(g.region.area) for g in gts}

    tally: dict[SizeClass, list[int]] = {}

    def bucket(cls: SizeClass) -> list[int]:
        return tally.setdefault(cls, [0, 0, 0])

    for rec in result.prediction_records:
        if rec.matched:
            weight: dict[SizeClass, float] = {}
            for gt_id, inter in zip(rec.matched, rec.intersections):
                cls = gt_class[gt_id]
                weight[cls] = weight.get(cls, 0.0) + inter
            cls = max(
                weight,
                key=lambda c: (weight[c], -SIZE_CLASS_ORDER.index(c)),
            )
        else:
            cls = classify_size(dets[rec.ref].region.area)
        bucket(cls)[0 if rec.outcome == "tp" else 1] += 1

    for rec in result.label_records:
        cls = gt_class[rec.ref]
        counts = bucket(cls)
        if rec.outcome == "fn":
            counts[2] += 1

    counts_by_class = {
        cls: ConfusionCounts(*tally[cls]) for cls in SIZE_CLASS_ORDER if cls in tally
    }
    return SizeEvaluation(counts_by_class=counts_by_class, total=result.counts)


@dataclass(frozen=True)
class ScoreRow:
    """One row of a score table (CSV export)."""

    data: str
    metric: str
    threshold: float
    size: str
    counts: ConfusionCounts
    scores: ScoreTriple


SCORE_CSV_COLUMNS = ("data", "metric", "threshold", "size", "TP", "FP", "FN", "P", "R", "F1")


def scores_csv_text(rows: Iterable[ScoreRow]) -> str:
    """Score rows as CSV text, percentages rounded to 2 decimals."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_CSV_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.data,
                row.metric,
                f"{row.threshold:g}",
                row.size,
                row.counts.tp,
                row.counts.fp,
                row.counts.fn,
                f"{row.scores.precision:.2f}",
                f"{row.scores.recall:.2f}",
                f"{row.scores.f1:.2f}",
            ]
        )
    return buf.getvalue()


def write_scores_csv(path: str | Path, rows: Iterable[ScoreRow]) -> None:
    Path(path).write_text(scores_csv_text(rows))
