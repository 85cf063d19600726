"""Instance matching: plain IoU and the soft S-IoU metric with two-pass counting.

Two overlap metrics are supported:

* ``iou``: intersection over union between one prediction and one label,
  always against the single best-matching counterpart.
* ``siou`` (soft IoU): a prediction is scored against the union of *all*
  ground-truth shapes it touches (what share of that joint footprint it
  recovers), and a label is scored against the union of all predictions
  touching it, normalized by the label's own area. Splitting one shrub
  into several detections, or merging a colony into one, is therefore
  not penalized the way plain IoU penalizes it.

Counting runs in two independent passes:

1. every surviving detection is scored and becomes TP or FP;
2. every ground truth is scored and becomes FN when under the threshold.

NOTE: unlike COCO-style greedy matching, labels are NOT consumed when a
prediction matches them. Several predictions may count as TP against the
same label, and ``tp + fn`` need not equal the number of ground truths
under S-IoU. This is deliberate; see ``MatchConfig.iou_exclusive_labels``
for the optional one-to-one alternative in the plain-IoU label pass.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

from shapely import STRtree

from .errors import EmptyMatchSet
from .geometry import Region, intersection, union

logger = logging.getLogger(__name__)

# Minimum intersection area (m2) for two instances to count as matching.
MATCH_AREA_EPS = 1e-9


class Source(str, Enum):
    """Provenance of a ground-truth annotation."""

    PI = "PI"  # photo-interpreted on screen
    FW = "FW"  # georeferenced in the field


class Metric(str, Enum):
    IOU = "iou"
    SIOU = "siou"


@dataclass(frozen=True)
class Detection:
    """One model detection: a region plus its confidence score."""

    region: Region
    score: float
    tile_id: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    """One annotated instance with a stable id and provenance tag."""

    region: Region
    id: str | int
    source: Source = Source.PI


@dataclass(frozen=True)
class MatchConfig:
    """Evaluation parameters.

    Attributes:
        metric: which overlap metric drives TP/FP/FN decisions.
        overlap_threshold: metric value at or above which a pair counts
            as a hit (the 50%/75% operating points).
        score_threshold: detections scoring below this are discarded
            before evaluation.
        min_label_fraction: optional stricter membership rule for match
            sets. By default any positive-area intersection (> 1e-9 m2)
            makes two instances matching; raising this requires the
            intersection to cover at least this fraction of the label's
            area. Leave at 0 for the permissive rule.
        iou_exclusive_labels: plain-IoU label pass only. When True, the
            FN pass uses a greedy one-to-one assignment (each prediction
            vouches for at most one label) instead of evaluating every
            label independently. Off by default.
    """

    metric: Metric = Metric.SIOU
    overlap_threshold: float = 0.5
    score_threshold: float = 0.5
    min_label_fraction: float = 0.0
    iou_exclusive_labels: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise ValueError(f"overlap_threshold {self.overlap_threshold} outside (0, 1]")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if not 0.0 <= self.min_label_fraction <= 1.0:
            raise ValueError(f"min_label_fraction {self.min_label_fraction} outside [0, 1]")


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/FN totals for one evaluation run."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.tp, self.fp, self.fn)


@dataclass(frozen=True)
class MatchRecord:
    """Per-instance outcome of one evaluation pass.

    ``ref`` is the detection index (prediction records) or the ground
    truth id (label records). ``matched`` lists counterpart refs, best
    first, with ``intersections`` holding the matching intersection
    areas in the same order.
    """

    kind: str  # "prediction" | "label"
    ref: int | str
    metric_value: float | None
    matched: tuple[int | str, ...]
    intersections: tuple[float, ...]
    outcome: str  # "tp" | "fp" | "fn" | "detected"


@dataclass
class SceneResult:
    """Counts plus per-instance records for one evaluated scene."""

    counts: ConfusionCounts
    prediction_records: list[MatchRecord]
    label_records: list[MatchRecord]
    dropped_empty: list[int] = field(default_factory=list)
    below_score: int = 0


def iou(p: Region, l: Region) -> float:
    """Intersection over union of two regions, in [0, 1].

    Symmetric; 0 when disjoint, 1 when identical.
    """
    inter = intersection(p, l).area
    if inter <= 0.0:
        return 0.0
    denom = p.area + l.area - inter
    if denom <= 0.0:
        return 0.0
    return inter / denom


def s_iou_prediction(p: Region, matched_labels: Sequence[Region]) -> float:
    """Soft overlap of a prediction against all its matching labels.

    Returns area(p intersect U) / area(U) where U is the union of the
    matching labels. Using the union keeps overlapping labels from being
    counted twice in the denominator. For a single label this reduces to
    area(p intersect l) / area(l), which is never below iou(p, l).

    Raises:
        EmptyMatchSet: when called with no labels. Callers must treat
            such a prediction as an FP candidate instead.
    """
    if not matched_labels:
        raise EmptyMatchSet("prediction has no matching labels")
    joint = union(matched_labels)
    denom = joint.area
    if denom < MATCH_AREA_EPS:
        raise EmptyMatchSet("matching labels have no area")
    return intersection(p, joint).area / denom


def s_iou_label(l: Region, matched_preds: Sequence[Region]) -> float:
    """Fraction of a label's area recovered by all its matching predictions.

    Returns area(l intersect U) / area(l) where U is the union of the
    matching predictions.

    Raises:
        EmptyMatchSet: when called with no predictions.
    """
    if not matched_preds:
        raise EmptyMatchSet("label has no matching predictions")
    denom = l.area
    if denom < MATCH_AREA_EPS:
        raise EmptyMatchSet("label has no area")
    joint = union(matched_preds)
    return intersection(l, joint).area / denom


def _ref_key(ref: int | str) -> tuple[int, int | str]:
    # Deterministic ordering across int and str ids; the leading tag keeps
    # ints and strings from ever being compared with each other.
    return (0, ref) if isinstance(ref, int) else (1, str(ref))


def _match_sets(
    sources: Sequence[Region],
    targets: Sequence[Region],
) -> list[list[tuple[int, float]]]:
    """For each source region, its (target index, intersection area) matches.

    Membership is any intersection above ``MATCH_AREA_EPS``; the optional
    fraction rule is applied by the caller, which knows which side of the
    pair is the ground truth.
    """
    if not sources or not targets:
        return [[] for _ in sources]
    tree = STRtree([t.geom for t in targets])
    out: list[list[tuple[int, float]]] = []
    for src in sources:
        matches: list[tuple[int, float]] = []
        if not src.is_empty:
            for ti in sorted(tree.query(src.geom)):
                ti = int(ti)
                inter = intersection(src, targets[ti]).area
                if inter > MATCH_AREA_EPS:
                    matches.append((ti, inter))
        out.append(matches)
    return out


def _fraction_filter(
    matches: list[tuple[int, float]],
    label_area_of: Callable[[int], float],
    min_fraction: float,
) -> list[tuple[int, float]]:
    """Keep matches whose intersection covers enough of the label's area."""
    if min_fraction <= 0.0:
        return matches
    kept = []
    for ti, inter in matches:
        label_area = label_area_of(ti)
        if label_area > 0.0 and inter / label_area >= min_fraction:
            kept.append((ti, inter))
    return kept


def _greedy_assigned_labels(
    pred_regions: Sequence[Region],
    gts: Sequence[GroundTruth],
    pred_matches: list[list[tuple[int, float]]],
    threshold: float,
) -> set[int]:
    """Greedy one-to-one assignment for the exclusive plain-IoU label pass.

    Pairs are taken in order of descending IoU (ties by larger
    intersection, then lower ids); each prediction and each label is
    used at most once. Returns indices of labels that got a partner at
    or above the threshold.
    """
    pairs = []
    for pi, matches in enumerate(pred_matches):
        for gi, inter in matches:
            value = iou(pred_regions[pi], gts[gi].region)
            if value >= threshold:
                pairs.append((value, inter, pi, gi))
    pairs.sort(key=lambda t: (-t[0], -t[1], t[2], _ref_key(gts[t[3]].id)))
    used_preds: set[int] = set()
    assigned: set[int] = set()
    for _, _, pi, gi in pairs:
        if pi in used_preds or gi in assigned:
            continue
        used_preds.add(pi)
        assigned.add(gi)
    return assigned


def evaluate_scene(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    cfg: MatchConfig,
) -> SceneResult:
    """Two-pass TP/FP/FN counting for one scene.

    Detections scoring below ``cfg.score_threshold`` are discarded first;
    detections whose region is empty after normalization are dropped and
    reported in ``SceneResult.dropped_empty``.

    Pass 1 scores each surviving detection (best-match IoU, or the soft
    metric against its full match set) and counts it TP when the value
    reaches ``cfg.overlap_threshold``, FP otherwise. Pass 2 scores each
    ground truth the same way and counts it FN when its value is missing
    or below the threshold. The passes are independent: no label is
    consumed by a match (see module notes).
    """
    dropped_empty = [i for i, d in enumerate(dets) if d.region.is_empty]
    if dropped_empty:
        logger.warning(
            "dropping %d detection(s) with empty regions: %s",
            len(dropped_empty),
            dropped_empty,
        )
    live = [(i, d) for i, d in enumerate(dets) if not d.region.is_empty]
    kept = [(i, d) for i, d in live if d.score >= cfg.score_threshold]
    below_score = len(live) - len(kept)

    kept_regions = [d.region for _, d in kept]
    gt_regions = [g.region for g in gts]
    gt_areas = [g.region.area for g in gts]

    # Match sets in both directions under the same membership rule. The
    # fraction option is always measured against the ground-truth area:
    # the target side in pass 1, the source side in pass 2.
    pred_matches = [
        _fraction_filter(m, lambda gi: gt_areas[gi], cfg.min_label_fraction)
        for m in _match_sets(kept_regions, gt_regions)
    ]
    label_matches = [
        _fraction_filter(m, lambda _pi, a=gt_areas[gi]: a, cfg.min_label_fraction)
        for gi, m in enumerate(_match_sets(gt_regions, kept_regions))
    ]

    tp = fp = fn = 0
    prediction_records: list[MatchRecord] = []
    for (det_index, det), matches in zip(kept, pred_matches):
        if cfg.metric is Metric.IOU:
            scored = [(iou(det.region, gts[gi].region), inter, gi) for gi, inter in matches]
            scored.sort(key=lambda t: (-t[0], -t[1], _ref_key(gts[t[2]].id)))
            value = scored[0][0] if scored else None
            matched_ids = tuple(gts[gi].id for _, _, gi in scored)
            inters = tuple(t[1] for t in scored)
        else:
            if matches:
                value = s_iou_prediction(det.region, [gts[gi].region for gi, _ in matches])
            else:
                value = None
            ordered = sorted(matches, key=lambda t: (-t[1], _ref_key(gts[t[0]].id)))
            matched_ids = tuple(gts[gi].id for gi, _ in ordered)
            inters = tuple(inter for _, inter in ordered)
        hit = value is not None and value >= cfg.overlap_threshold
        if hit:
            tp += 1
        else:
            fp += 1
        prediction_records.append(
            MatchRecord(
                kind="prediction",
                ref=det_index,
                metric_value=value,
                matched=matched_ids,
                intersections=inters,
                outcome="tp" if hit else "fp",
            )
        )

    exclusive_assigned: set[int] | None = None
    if cfg.metric is Metric.IOU and cfg.iou_exclusive_labels:
        exclusive_assigned = _greedy_assigned_labels(
            kept_regions, gts, pred_matches, cfg.overlap_threshold
        )

    label_records: list[MatchRecord] = []
    for gi, g in enumerate(gts):
        matches = label_matches[gi]
        if cfg.metric is Metric.IOU:
            scored = [(iou(g.region, kept_regions[pi]), inter, pi) for pi, inter in matches]
            scored.sort(key=lambda t: (-t[0], -t[1], t[2]))
            value = scored[0][0] if scored else None
            matched_refs = tuple(kept[pi][0] for _, _, pi in scored)
            inters = tuple(inter for _, inter, _ in scored)
            if exclusive_assigned is not None:
                detected = gi in exclusive_assigned
            else:
                detected = value is not None and value >= cfg.overlap_threshold
        else:
            if matches:
                value = s_iou_label(g.region, [kept_regions[pi] for pi, _ in matches])
            else:
                value = None
            ordered = sorted(matches, key=lambda t: (-t[1], t[0]))
            matched_refs = tuple(kept[pi][0] for pi, _ in ordered)
            inters = tuple(inter for _, inter in ordered)
            detected = value is not None and value >= cfg.overlap_threshold
        if not detected:
            fn += 1
        label_records.append(
            MatchRecord(
                kind="label",
                ref=g.id,
                metric_value=value,
                matched=matched_refs,
                intersections=inters,
                outcome="detected" if detected else "fn",
            )
        )

    return SceneResult(
        counts=ConfusionCounts(tp, fp, fn),
        prediction_records=prediction_records,
        label_records=label_records,
        dropped_empty=dropped_empty,
        below_score=below_score,
    )


def evaluate_scenes(
    scenes: Iterable[tuple[Sequence[Detection], Sequence[GroundTruth]]],
    cfg: MatchConfig,
    max_workers: int | None = None,
) -> ConfusionCounts:
    """Evaluate many scenes concurrently and sum their counts."""
    scenes = list(scenes)
    total = ConfusionCounts()
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for result in pool.map(lambda s: evaluate_scene(s[0], s[1], cfg), scenes):
            total = total + result.counts
    return total
