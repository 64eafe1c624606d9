"""Detection mAP with frequency-grouped reporting.

A prediction matches a ground-truth triplet when object class and action agree
and both box IoUs reach 0.5 (inclusive). Matching is greedy in descending
score order, each ground truth claimable once; ties on match candidates go to
the highest IoU sum. Average precision is the area under the interpolated
precision-recall staircase. Classes (action, object pairs) with fewer ground
truths than the rare threshold form the "rare" group, the rest "non-rare";
the full mAP averages over every class with at least one ground truth.
"""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .geometry import box_iou

IOU_THRESHOLD = 0.5
DEFAULT_RARE_THRESHOLD = 10

ClassKey = tuple[int, int]  # (action, object_class)


@dataclass
class GTEntry:
    image_id: str
    human_box: tuple
    object_box: tuple
    object_class: int
    action: int
    matched: bool = False


@dataclass
class EvalReport:
    per_class_ap: dict[ClassKey, float]
    gt_counts: dict[ClassKey, int]
    map_full: float
    map_rare: float
    map_nonrare: float
    rare_threshold: int

    @property
    def rare_classes(self) -> list[ClassKey]:
        return sorted(k for k, n in self.gt_counts.items() if n < self.rare_threshold)

    @property
    def nonrare_classes(self) -> list[ClassKey]:
        return sorted(k for k, n in self.gt_counts.items() if n >= self.rare_threshold)

    def to_json(self) -> dict:
        return {
            "rare_threshold": self.rare_threshold,
            "map": {"full": self.map_full, "rare": self.map_rare,
                    "nonrare": self.map_nonrare},
            "classes": [
                {
                    "action": action,
                    "object": obj,
                    "ap": self.per_class_ap[(action, obj)],
                    "gt_count": self.gt_counts[(action, obj)],
                    "rare": self.gt_counts[(action, obj)] < self.rare_threshold,
                }
                for action, obj in sorted(self.per_class_ap)
            ],
        }


def match_pair(pred: dict, gt: GTEntry) -> bool:
    """Class, action, and both-boxes-IoU>=0.5 test (same image assumed)."""
    return (
        pred["object_class"] == gt.object_class
        and pred["action"] == gt.action
        and box_iou(pred["human_box"], gt.human_box) >= IOU_THRESHOLD
        and box_iou(pred["object_box"], gt.object_box) >= IOU_THRESHOLD
    )


def ap_from_flags(tp_flags: list[bool], n_gt: int) -> float:
    """Area under the interpolated precision-recall staircase.

    ``tp_flags`` are the true-positive markers of the predictions already
    sorted by descending score; ``n_gt`` is the number of ground truths of the
    class. Precision is interpolated to its running maximum from the right.
    """
    if n_gt <= 0:
        return 0.0
    if not tp_flags:
        return 0.0
    flags = np.asarray(tp_flags, dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float((steps * envelope).sum())


def average_precision(preds: list[dict], gts: list[GTEntry]) -> float:
    """AP of one class: greedy single-match in descending prediction score.

    ``preds`` are prediction records of this class (any order; sorted here,
    input order breaking score ties), ``gts`` the class's ground-truth entries.
    """
    n_gt = len(gts)
    for gt in gts:
        gt.matched = False
    by_image: dict[str, list[GTEntry]] = defaultdict(list)
    for gt in gts:
        by_image[gt.image_id].append(gt)
    order = sorted(range(len(preds)), key=lambda i: -float(preds[i]["score"]))
    flags = []
    for i in order:
        pred = preds[i]
        best, best_iou_sum = None, -1.0
        for gt in by_image.get(pred["image_id"], []):
            if gt.matched or not match_pair(pred, gt):
                continue
            iou_sum = box_iou(pred["human_box"], gt.human_box) + box_iou(
                pred["object_box"], gt.object_box
            )
            if iou_sum > best_iou_sum:
                best, best_iou_sum = gt, iou_sum
        if best is not None:
            best.matched = True
            flags.append(True)
        else:
            flags.append(False)
    return ap_from_flags(flags, n_gt)


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def evaluate_records(
    pred_records: list[dict],
    gt_entries: list[GTEntry],
    rare_threshold: int = DEFAULT_RARE_THRESHOLD,
    class_subset: set[ClassKey] | None = None,
    threads: int = 1,
) -> EvalReport:
    """Score prediction records against ground truth; the core of ``evaluate``.

    Classes with zero ground truth are excluded from every mAP denominator;
    predictions of such classes are false positives by definition and trigger
    a warning. ``class_subset`` restricts the report to the listed
    (action, object) classes (split bookkeeping for held-out-class runs).
    """
    gt_by_class: dict[ClassKey, list[GTEntry]] = defaultdict(list)
    for gt in gt_entries:
        gt_by_class[(gt.action, gt.object_class)].append(gt)
    preds_by_class: dict[ClassKey, list[dict]] = defaultdict(list)
    for rec in pred_records:
        preds_by_class[(rec["action"], rec["object_class"])].append(rec)

    classes = sorted(gt_by_class)
    if class_subset is not None:
        classes = [c for c in classes if c in class_subset]
    orphans = sorted(set(preds_by_class) - set(gt_by_class))
    if orphans:
        warnings.warn(
            f"{len(orphans)} predicted class(es) have no ground truth and count "
            f"only as false positives: {orphans}",
            stacklevel=2,
        )

    def ap_of(key: ClassKey) -> float:
        return average_precision(preds_by_class.get(key, []), gt_by_class[key])

    if threads > 1 and len(classes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            aps = list(pool.map(ap_of, classes))
    else:
        aps = [ap_of(key) for key in classes]
    per_class = dict(zip(classes, aps))
    counts = {key: len(gt_by_class[key]) for key in classes}
    rare = [per_class[k] for k in classes if counts[k] < rare_threshold]
    nonrare = [per_class[k] for k in classes if counts[k] >= rare_threshold]
    return EvalReport(
        per_class_ap=per_class,
        gt_counts=counts,
        map_full=_mean(list(per_class.values())),
        map_rare=_mean(rare),
        map_nonrare=_mean(nonrare),
        rare_threshold=rare_threshold,
    )


def read_ground_truth(path) -> list[GTEntry]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid ground-truth JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or "images" not in doc:
        raise FormatError(f"ground-truth file {path} must carry an images list")
    entries = []
    for image in doc["images"]:
        for ann in image.get("annotations", []):
            entries.append(
                GTEntry(
                    image_id=str(image["image_id"]),
                    human_box=tuple(ann["human_box"]),
                    object_box=tuple(ann["object_box"]),
                    object_class=int(ann["object_class"]),
                    action=int(ann["action"]),
                )
            )
    return entries


def write_ground_truth(path, per_image: dict[str, list[dict]]) -> None:
    doc = {
        "images": [
            {"image_id": image_id, "annotations": anns}
            for image_id, anns in per_image.items()
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def evaluate(
    predictions_path,
    gt_path,
    rare_threshold: int = DEFAULT_RARE_THRESHOLD,
    class_subset: set[ClassKey] | None = None,
    threads: int = 1,
) -> EvalReport:
    """File-level entry point: JSON-lines predictions vs ground-truth JSON."""
    from .detection import read_predictions

    return evaluate_records(
        read_predictions(predictions_path),
        read_ground_truth(gt_path),
        rare_threshold=rare_threshold,
        class_subset=class_subset,
        threads=threads,
    )
