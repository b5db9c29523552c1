"""mAP at IoU 0.5 with all-point interpolated precision/recall curves."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from geometry.boxes import Detection, detections_to_arrays, iou_matrix
from schema.dataset_schema import GroundTruth

IOU_MATCH_THRESHOLD = 0.5


@dataclass
class ClassAP:
    class_id: int
    ap: float
    n_gt: int
    n_detections: int
    precision: np.ndarray = field(default_factory=lambda: np.zeros(0))
    recall: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class MapResult:
    per_class: Dict[int, ClassAP]
    map50: float

    def pr_curves(self, class_names: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Long-format PR curves: one row per (class, recall, precision) point."""
        frames = []
        for class_id, entry in sorted(self.per_class.items()):
            name = class_names[class_id] if class_names else str(class_id)
            frames.append(
                pd.DataFrame(
                    {"class": name, "recall": entry.recall, "precision": entry.precision}
                )
            )
        if not frames:
            return pd.DataFrame(columns=["class", "recall", "precision"])
        return pd.concat(frames, ignore_index=True)

    def ap_by_class(self, class_names: Optional[Sequence[str]] = None) -> Dict[str, float]:
        return {
            (class_names[k] if class_names else str(k)): v.ap
            for k, v in sorted(self.per_class.items())
        }


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changes = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def match_image(
    det_corners: np.ndarray,
    det_scores: np.ndarray,
    gt_corners: np.ndarray,
    iou_threshold: float = IOU_MATCH_THRESHOLD,
) -> np.ndarray:
    """
    Greedy matching of one image and class.

    Detections are visited in descending score order (ties by position); each
    takes the still-unmatched ground truth with the highest IoU if that IoU
    reaches the threshold.

    Returns:
        np.ndarray: bool true-positive flag per detection, in input order.
    """
    flags = np.zeros(det_scores.shape[0], dtype=bool)
    if det_scores.size == 0 or gt_corners.shape[0] == 0:
        return flags
    ious = iou_matrix(det_corners, gt_corners)
    taken = np.zeros(gt_corners.shape[0], dtype=bool)
    for d in np.argsort(-det_scores, kind="stable"):
        candidates = np.where(taken, -1.0, ious[d])
        best = int(np.argmax(candidates))
        if candidates[best] >= iou_threshold:
            taken[best] = True
            flags[d] = True
    return flags


def map50(
    detections: Sequence[Sequence[Detection]],
    ground_truths: Sequence[GroundTruth],
    num_classes: int,
    iou_threshold: float = IOU_MATCH_THRESHOLD,
) -> MapResult:
    """
    Mean average precision at IoU 0.5.

    Args:
        detections: post-NMS detections per image.
        ground_truths: ground truth per image.
        num_classes (int): number of classes.

    Returns:
        MapResult: per-class AP and PR curves, and their unweighted mean over
            every class that has ground truth or detections.
    """
    if len(detections) != len(ground_truths):
        raise ValueError(
            f"{len(detections)} detection lists for {len(ground_truths)} images"
        )
    scores: Dict[int, List[np.ndarray]] = {k: [] for k in range(num_classes)}
    hits: Dict[int, List[np.ndarray]] = {k: [] for k in range(num_classes)}
    n_gt = np.zeros(num_classes, dtype=np.int64)

    for dets, gt in zip(detections, ground_truths):
        corners, det_scores, det_classes = detections_to_arrays(list(dets))
        gt_corners = gt.corners()
        gt_classes = np.asarray(gt.classes, dtype=np.int64)
        for k in range(num_classes):
            in_class = det_classes == k
            gt_k = gt_corners[gt_classes == k]
            n_gt[k] += gt_k.shape[0]
            if not in_class.any():
                continue
            scores[k].append(det_scores[in_class])
            hits[k].append(
                match_image(corners[in_class], det_scores[in_class], gt_k, iou_threshold)
            )

    per_class: Dict[int, ClassAP] = {}
    for k in range(num_classes):
        class_scores = np.concatenate(scores[k]) if scores[k] else np.zeros(0)
        class_hits = np.concatenate(hits[k]) if hits[k] else np.zeros(0, dtype=bool)
        if n_gt[k] == 0 and class_scores.size == 0:
            continue
        if class_scores.size == 0 or n_gt[k] == 0:
            per_class[k] = ClassAP(k, 0.0, int(n_gt[k]), int(class_scores.size))
            continue
        order = np.argsort(-class_scores, kind="stable")
        tp = np.cumsum(class_hits[order])
        fp = np.cumsum(~class_hits[order])
        recall = tp / n_gt[k]
        precision = tp / np.maximum(tp + fp, 1)
        per_class[k] = ClassAP(
            class_id=k,
            ap=average_precision(recall, precision),
            n_gt=int(n_gt[k]),
            n_detections=int(class_scores.size),
            precision=precision,
            recall=recall,
        )

    mean_ap = float(np.mean([v.ap for v in per_class.values()])) if per_class else 0.0
    return MapResult(per_class=per_class, map50=mean_ap)
