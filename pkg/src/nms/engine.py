"""Greedy non-maximum suppression with per-phase instrumentation.

The loop follows the classic score-sorted greedy procedure: select the
highest-scoring box M, emit it, compute IoU(M, b_i) for every remaining
box (compute phase), then drop every b_i above the threshold (logic /
transfer phase). Counters and wall-clock timings are attributed to the two
phases so that a two-term cost model can be calibrated from them.
"""
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import PreconditionError
from geometry.boxes import Detection, detections_to_arrays, iou_one_to_many


@dataclass(frozen=True)
class NmsConfig:
    conf_threshold: float = 0.25
    iou_threshold: float = 0.6
    max_detections: Optional[int] = None
    class_aware: bool = False

    def __post_init__(self):
        for name in ("conf_threshold", "iou_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise PreconditionError(f"{name} must be in [0, 1]. Given {value}")
        if self.max_detections is not None and self.max_detections < 0:
            raise PreconditionError("max_detections must be non-negative")


@dataclass(frozen=True)
class NmsTrace:
    """Operation counters and per-phase timings (ns) of one NMS run."""

    input_count: int
    output_count: int
    iou_ops: int
    transfer_ops: int
    while_iterations: int
    wall_time_compute: int
    wall_time_logic: int

    @property
    def wall_time_total(self) -> int:
        return self.wall_time_compute + self.wall_time_logic

    def as_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "output_count": self.output_count,
            "iou_ops": self.iou_ops,
            "transfer_ops": self.transfer_ops,
            "while_iterations": self.while_iterations,
            "wall_time_compute": self.wall_time_compute,
            "wall_time_logic": self.wall_time_logic,
        }


def confidence_filter(
    detections: Sequence[Detection], conf_threshold: float
) -> List[Detection]:
    """Keep detections whose objectness x max class score exceeds the threshold."""
    return [d for d in detections if d.score > conf_threshold]


def nms_arrays(
    corners: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float,
    class_ids: Optional[np.ndarray] = None,
    max_detections: Optional[int] = None,
) -> Tuple[np.ndarray, NmsTrace]:
    """
    Greedy NMS on arrays.

    Args:
        corners (np.ndarray): (N, 4) corner-form boxes.
        scores (np.ndarray): (N,) scores.
        iou_threshold (float): boxes with IoU > threshold against a kept box
            are suppressed.
        class_ids (np.ndarray, optional): when given, boxes of different
            classes never suppress each other.
        max_detections (int, optional): stop after this many boxes are kept.

    Returns:
        Tuple[np.ndarray, NmsTrace]: indices of kept boxes in descending score
            order (ties broken by lower index) and the trace.
    """
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.shape[0]
    if class_ids is not None:
        # offset boxes per class so that cross-class IoU is always 0
        span = float(np.abs(corners).max()) + 1.0 if n else 1.0
        offsets = np.asarray(class_ids, dtype=np.float64).reshape(-1, 1) * 2.0 * span
        corners = corners + offsets

    t_sort = time.perf_counter_ns()
    remaining = np.argsort(-scores, kind="stable")
    keep: List[int] = []
    iou_ops = 0
    transfer_ops = 0
    iterations = 0
    # the score sort is part of the compute phase
    compute_ns = time.perf_counter_ns() - t_sort
    logic_ns = 0

    while remaining.size > 0:
        if max_detections is not None and len(keep) >= max_detections:
            break
        iterations += 1

        t0 = time.perf_counter_ns()
        best = int(remaining[0])
        rest = remaining[1:]
        ious = iou_one_to_many(corners[best], corners[rest])
        t1 = time.perf_counter_ns()

        keep.append(best)
        survivors = rest[ious <= iou_threshold]
        t2 = time.perf_counter_ns()

        iou_ops += int(rest.size)
        # one transfer for the emitted box and one per suppressed box
        transfer_ops += 1 + int(rest.size - survivors.size)
        compute_ns += t1 - t0
        logic_ns += t2 - t1
        remaining = survivors

    trace = NmsTrace(
        input_count=n,
        output_count=len(keep),
        iou_ops=iou_ops,
        transfer_ops=transfer_ops,
        while_iterations=iterations,
        wall_time_compute=compute_ns,
        wall_time_logic=logic_ns,
    )
    return np.array(keep, dtype=np.int64), trace


def nms(
    detections: Sequence[Detection], cfg: NmsConfig
) -> Tuple[List[Detection], NmsTrace]:
    """
    Greedy NMS over detections (no confidence filtering; see confidence_filter).

    Args:
        detections (Sequence[Detection]): candidate detections.
        cfg (NmsConfig): thresholds and options.

    Returns:
        Tuple[List[Detection], NmsTrace]: kept detections in descending score
            order and the trace of the work performed.
    """
    corners, scores, class_ids = detections_to_arrays(detections)
    kept_idx, trace = nms_arrays(
        corners,
        scores,
        cfg.iou_threshold,
        class_ids=class_ids if cfg.class_aware else None,
        max_detections=cfg.max_detections,
    )
    return [detections[i] for i in kept_idx], trace


def postprocess(
    detections: Sequence[Detection], cfg: NmsConfig
) -> Tuple[List[Detection], NmsTrace]:
    """Confidence filter followed by NMS, the detector's standard post-processing."""
    return nms(confidence_filter(detections, cfg.conf_threshold), cfg)
