"""Segmentation metrics, discrete constraint satisfaction, and bucketed
comparisons between a baseline run and a refined run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import FormatError, SceneSetMismatchError, UnknownCategoryError
from .grid import LabelMap, ProbabilityMap, weighted_mean_coordinate
from .logic import half_plane_mask
from .relations import SpatialTriplet, TripletSet
from .scenes import Scene

GroupBy = Literal["categories", "constraints", "ratio"]

DEFAULT_SATISFACTION_THRESHOLD = 0.95


def _check_shapes(pred: LabelMap, gt: LabelMap) -> None:
    if pred.shape != gt.shape:
        raise FormatError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")


def iou_per_class(pred: LabelMap, gt: LabelMap, num_categories: int) -> dict[int, float]:
    """IoU per category index; categories with an empty union are skipped."""
    _check_shapes(pred, gt)
    out: dict[int, float] = {}
    for c in range(num_categories):
        in_pred = pred.labels == c
        in_gt = gt.labels == c
        union = int((in_pred | in_gt).sum())
        if union == 0:
            continue
        out[c] = float((in_pred & in_gt).sum()) / union
    return out


def miou(pred: LabelMap, gt: LabelMap, num_categories: int) -> float:
    """Mean IoU over categories present in the prediction or the ground truth."""
    ious = iou_per_class(pred, gt, num_categories)
    if not ious:
        return 0.0
    return sum(ious.values()) / len(ious)


def macc(pred: LabelMap, gt: LabelMap, num_categories: int) -> float:
    """Mean per-class recall over categories present in the ground truth."""
    _check_shapes(pred, gt)
    recalls = []
    for c in range(num_categories):
        in_gt = gt.labels == c
        support = int(in_gt.sum())
        if support == 0:
            continue
        recalls.append(float(((pred.labels == c) & in_gt).sum()) / support)
    if not recalls:
        return 0.0
    return sum(recalls) / len(recalls)


def triplet_satisfied(
    pred: LabelMap,
    roster: Sequence[str],
    triplet: SpatialTriplet,
    threshold: float = DEFAULT_SATISFACTION_THRESHOLD,
) -> bool:
    """Discrete check of one triplet against predicted labels.

    Satisfied when at least `threshold` of the subject's predicted pixels lie
    in the half plane on the triplet's side of the object's one-hot mask mean.
    Purely discrete: no soft maps and no epsilon in the mean, so a pixel at
    the exact mean counts for both opposing sides. A subject with no
    predicted pixels is vacuously satisfied.
    """
    index = {name: i for i, name in enumerate(roster)}
    for name in (triplet.subject, triplet.object):
        if name not in index:
            raise UnknownCategoryError(f"triplet {triplet} names {name!r}, not in roster")
    subject_mask = pred.labels == index[triplet.subject]
    subject_pixels = int(subject_mask.sum())
    if subject_pixels == 0:
        return True
    object_onehot = ProbabilityMap((pred.labels == index[triplet.object]).astype(np.float64))
    mean = weighted_mean_coordinate(object_onehot, triplet.relation.axis, epsilon=0.0)
    region = half_plane_mask(pred.height, pred.width, triplet.relation, mean)
    inside = int((subject_mask & (region > 0)).sum())
    return inside / subject_pixels >= threshold


def constraint_satisfaction(
    pred: LabelMap,
    roster: Sequence[str],
    triplets: TripletSet,
    threshold: float = DEFAULT_SATISFACTION_THRESHOLD,
) -> float:
    """Fraction of triplets discretely satisfied by the predicted labels;
    1.0 for an empty set."""
    if not triplets:
        return 1.0
    satisfied = sum(triplet_satisfied(pred, roster, t, threshold) for t in triplets)
    return satisfied / len(triplets)


@dataclass(frozen=True)
class EvalReport:
    """Metrics for one scene plus the grouping keys used by compare_runs."""

    scene: str
    miou: float
    macc: float
    constraint_satisfaction: float
    per_class_iou: dict[str, float]
    category_count: int
    constraint_count: int

    @property
    def constraint_ratio(self) -> float:
        return self.constraint_count / max(self.category_count, 1)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "miou": self.miou,
            "macc": self.macc,
            "constraint_satisfaction": self.constraint_satisfaction,
            "per_class_iou": dict(self.per_class_iou),
            "category_count": self.category_count,
            "constraint_count": self.constraint_count,
            "constraint_ratio": self.constraint_ratio,
        }


def evaluate_scene(
    pred: LabelMap,
    scene: Scene,
    triplets: TripletSet | None = None,
    threshold: float = DEFAULT_SATISFACTION_THRESHOLD,
    name: str | None = None,
) -> EvalReport:
    """Score a prediction against a scene's ground truth.

    The category count groups by ground truth: distinct non-background
    categories present in the label map.
    """
    active = triplets if triplets is not None else scene.gt_triplets
    roster = scene.categories
    present = np.unique(scene.gt_labels.labels)
    category_count = int((present != 0).sum())
    ious = iou_per_class(pred, scene.gt_labels, len(roster))
    return EvalReport(
        scene=name if name is not None else "",
        miou=miou(pred, scene.gt_labels, len(roster)),
        macc=macc(pred, scene.gt_labels, len(roster)),
        constraint_satisfaction=constraint_satisfaction(pred, roster, active, threshold),
        per_class_iou={roster[c]: value for c, value in ious.items()},
        category_count=category_count,
        constraint_count=len(active),
    )


@dataclass(frozen=True)
class BucketDelta:
    bucket: str
    scenes: int
    baseline_miou: float
    refined_miou: float

    @property
    def delta(self) -> float:
        return self.refined_miou - self.baseline_miou


def _bucket_key(report: EvalReport, group_by: GroupBy) -> tuple[float, str]:
    if group_by == "categories":
        return (report.category_count, str(report.category_count))
    if group_by == "constraints":
        return (report.constraint_count, str(report.constraint_count))
    if group_by == "ratio":
        k = math.floor(report.constraint_ratio)
        return (k, f"[{k},{k + 1})")
    raise FormatError(f"unknown grouping {group_by!r}")


def compare_runs(
    baseline: Sequence[EvalReport],
    refined: Sequence[EvalReport],
    group_by: GroupBy = "categories",
) -> list[BucketDelta]:
    """Per-bucket mean mIoU of two runs over the same scene set.

    Reports are aligned by scene name; buckets come from the baseline run's
    grouping keys and buckets with no scenes simply do not appear.
    """
    base_by_scene = {r.scene: r for r in baseline}
    ref_by_scene = {r.scene: r for r in refined}
    if len(base_by_scene) != len(baseline) or len(ref_by_scene) != len(refined):
        raise SceneSetMismatchError("duplicate scene names in a run")
    if set(base_by_scene) != set(ref_by_scene):
        missing = sorted(set(base_by_scene) ^ set(ref_by_scene))
        raise SceneSetMismatchError(f"runs cover different scenes, e.g. {missing[:5]}")

    groups: dict[tuple[float, str], list[tuple[EvalReport, EvalReport]]] = {}
    for scene_name in sorted(base_by_scene):
        base = base_by_scene[scene_name]
        groups.setdefault(_bucket_key(base, group_by), []).append(
            (base, ref_by_scene[scene_name])
        )

    deltas = []
    for key in sorted(groups):
        pairs = groups[key]
        deltas.append(
            BucketDelta(
                bucket=key[1],
                scenes=len(pairs),
                baseline_miou=sum(b.miou for b, _ in pairs) / len(pairs),
                refined_miou=sum(r.miou for _, r in pairs) / len(pairs),
            )
        )
    return deltas


def write_bucket_csv(path: str | Path, deltas: Sequence[BucketDelta]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bucket", "scenes", "baseline_miou", "refined_miou", "delta"])
        for d in deltas:
            writer.writerow([d.bucket, d.scenes, repr(d.baseline_miou), repr(d.refined_miou), repr(d.delta)])
