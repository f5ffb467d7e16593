"""Localization and recognition metrics over scored boxes.

Conventions: IoU comparisons are strict (``> iou_min``, ``> nms_threshold``),
score thresholds are inclusive (``score >= t``). Matching is greedy in
descending score order and each ground-truth box is consumed at most once.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boxes import BoundingBox, Detection, GroundTruthBox
from .dataset_io import group_by_image

__all__ = [
    "BoundingBox",
    "ConfusionCounts",
    "PRF",
    "SweepTable",
    "iou",
    "nms",
    "apply_score_threshold",
    "match_detections",
    "prf",
    "recognition_accuracy",
    "sweep_thresholds",
    "average_precision",
    "mean_average_precision",
]


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    iw = min(b1.x2, b2.x2) - max(b1.x1, b2.x1)
    ih = min(b1.y2, b2.y2) - max(b1.y1, b2.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (b1.area + b2.area - inter)


def _by_score(dets: Sequence[Detection]) -> list[Detection]:
    # stable: equal scores keep input order
    return sorted(dets, key=lambda d: -d.score)


def nms(dets: Sequence[Detection], iou_threshold: float = 0.7) -> list[Detection]:
    """Greedy suppression of boxes overlapping a kept, higher-scoring box."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must lie in (0, 1]")
    if len({d.image_id for d in dets}) > 1:
        raise ValueError("nms expects detections from a single image")
    remaining = _by_score(dets)
    keep: list[Detection] = []
    while remaining:
        top = remaining.pop(0)
        keep.append(top)
        remaining = [d for d in remaining if iou(top.box, d.box) <= iou_threshold]
    return keep


def nms_per_image(dets: Sequence[Detection], iou_threshold: float = 0.7) -> list[Detection]:
    groups = group_by_image(dets)
    out = []
    for image_id in sorted(groups):
        out.extend(nms(groups[image_id], iou_threshold))
    return out


def apply_score_threshold(dets: Sequence[Detection], threshold: float) -> list[Detection]:
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    return [d for d in dets if d.score >= threshold]


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    pairs: list = field(default_factory=list, repr=False)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.pairs + other.pairs)


def _match_image(dets, gts, iou_min, label_aware):
    used = [False] * len(gts)
    tp = fp = 0
    pairs = []
    for d in _by_score(dets):
        best_j, best_iou = -1, iou_min
        for j, g in enumerate(gts):
            if used[j] or (label_aware and g.label != d.label):
                continue
            o = iou(d.box, g.box)
            if o > best_iou:
                best_j, best_iou = j, o
        if best_j >= 0:
            used[best_j] = True
            tp += 1
            pairs.append((d, gts[best_j]))
        else:
            fp += 1
    return tp, fp, used.count(False), pairs


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_min: float = 0.5,
    label_aware: bool = False,
) -> ConfusionCounts:
    """Greedy one-to-one matching per image.

    Each detection, highest score first, takes the unmatched ground truth
    (same label if ``label_aware``) with the largest IoU above ``iou_min``.
    """
    if not (0.0 < iou_min <= 1.0):
        raise ValueError("iou_min must lie in (0, 1]")
    det_groups = group_by_image(dets)
    gt_groups = group_by_image(gts)
    total = ConfusionCounts()
    for image_id in sorted(set(det_groups) | set(gt_groups)):
        tp, fp, fn, pairs = _match_image(det_groups.get(image_id, []), gt_groups.get(image_id, []), iou_min, label_aware)
        total = total + ConfusionCounts(tp, fp, fn, pairs)
    return total


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f_measure: float


def prf(counts: ConfusionCounts) -> PRF:
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return PRF(p, r, f_measure(p, r))


def f_measure(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def recognition_accuracy(counts: ConfusionCounts) -> float:
    """TP / (TP + FP + FN); warns and returns 0 when all counts are zero."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        warnings.warn("recognition accuracy undefined for all-zero counts", RuntimeWarning, stacklevel=2)
        return 0.0
    return counts.tp / denom


@dataclass
class SweepTable:
    thresholds: list[float]
    rows: list[PRF]
    best_threshold: float

    def write_csv(self, path) -> None:
        lines = ["threshold,precision,recall,f_measure"]
        for t, r in zip(self.thresholds, self.rows):
            lines.append(f"{t:.6f},{r.precision:.6f},{r.recall:.6f},{r.f_measure:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sweep_thresholds(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    n_points: int = 21,
    iou_min: float = 0.5,
) -> SweepTable:
    """Precision/recall/F at ``n_points`` evenly spaced score thresholds in [0, 1]."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    thresholds = [i / (n_points - 1) for i in range(n_points)]
    rows = [prf(match_detections(apply_score_threshold(dets, t), gts, iou_min, label_aware=False)) for t in thresholds]
    best = max(range(n_points), key=lambda i: (rows[i].f_measure, -i))
    return SweepTable(thresholds, rows, thresholds[best])


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_min: float = 0.5,
    eleven_point: bool = False,
) -> float:
    """Area under the precision envelope of the ranked detections of one class."""
    if not gts:
        raise ValueError("average precision needs at least one ground-truth box")
    gt_groups = group_by_image(gts)
    used = {k: [False] * len(v) for k, v in gt_groups.items()}
    ranked = _by_score(dets)
    hits = np.zeros(len(ranked))
    for n, d in enumerate(ranked):
        cands = gt_groups.get(d.image_id, [])
        best_j, best_iou = -1, iou_min
        for j, g in enumerate(cands):
            if used[d.image_id][j]:
                continue
            o = iou(d.box, g.box)
            if o > best_iou:
                best_j, best_iou = j, o
        if best_j >= 0:
            used[d.image_id][best_j] = True
            hits[n] = 1.0
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / len(gts)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).tiny)
    if eleven_point:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            ap += precision[recall >= t].max() / 11.0 if np.any(recall >= t) else 0.0
        return float(ap)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


@dataclass
class MapResult:
    map: float
    per_class_ap: dict
    excluded_classes: list


def mean_average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_min: float = 0.5,
    eleven_point: bool = False,
) -> MapResult:
    """Unweighted mean AP over classes present in the ground truth.

    Classes seen only among detections have no AP and are listed as excluded.
    """
    gt_classes = sorted({g.label for g in gts})
    if not gt_classes:
        raise ValueError("mAP needs at least one class with ground truth")
    excluded = sorted({d.label for d in dets if d.label is not None} - set(gt_classes))
    per_class = {}
    for c in gt_classes:
        per_class[c] = average_precision(
            [d for d in dets if d.label == c], [g for g in gts if g.label == c], iou_min, eleven_point
        )
    value = float(np.mean([per_class[c] for c in gt_classes]))
    return MapResult(value, per_class, excluded)


def recognition_report(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_min: float = 0.5,
    score_threshold: Optional[float] = None,
) -> dict:
    """Label-aware P/R/F, accuracy and mAP, in the metrics-report layout.

    The score threshold (if any) applies to the P/R/F/accuracy counts; mAP
    always ranks the full detection list.
    """
    kept = dets if score_threshold is None else apply_score_threshold(dets, score_threshold)
    counts = match_detections(kept, gts, iou_min, label_aware=True)
    scores = prf(counts)
    m = mean_average_precision(dets, gts, iou_min)
    return {
        "precision": scores.precision,
        "recall": scores.recall,
        "f_measure": scores.f_measure,
        "accuracy": recognition_accuracy(counts),
        "map": m.map,
        "per_class_ap": m.per_class_ap,
        "excluded_classes": m.excluded_classes,
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
