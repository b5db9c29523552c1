"""Axis-aligned boxes, IoU and the CIoU localization loss.

Center form (cx, cy, w, h) is canonical; corner form (x1, y1, x2, y2) is a
view. Scalar functions take BBox values; the vectorized numpy/torch
variants below are what the NMS engine, the detector loss and the attack
losses use.
"""
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
import torch

from errors import PreconditionError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixels, center form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise PreconditionError(
                f"Box extents must be non-negative. Given w={self.w}, h={self.h}"
            )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(
            cx=(x1 + x2) / 2.0,
            cy=(y1 + y2) / 2.0,
            w=max(x2 - x1, 0.0),
            h=max(y2 - y1, 0.0),
        )

    @property
    def corners(self) -> Tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class Detection:
    """A candidate box with its objectness and per-class scores."""

    box: BBox
    objectness: float
    class_scores: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.objectness <= 1.0:
            raise PreconditionError(
                f"objectness must be in [0, 1]. Given {self.objectness}"
            )
        if any(not 0.0 <= s <= 1.0 for s in self.class_scores):
            raise PreconditionError("every class score must be in [0, 1]")

    @property
    def class_id(self) -> int:
        if not self.class_scores:
            return 0
        return int(np.argmax(self.class_scores))

    @property
    def score(self) -> float:
        """Filtering score: objectness x max class probability."""
        if not self.class_scores:
            return self.objectness
        return self.objectness * max(self.class_scores)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def boxes_to_corners(boxes: np.ndarray) -> np.ndarray:
    """(N, 4) center form -> (N, 4) corner form."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    half = boxes[:, 2:] / 2.0
    return np.concatenate([boxes[:, :2] - half, boxes[:, :2] + half], axis=1)


def corners_to_boxes(corners: np.ndarray) -> np.ndarray:
    """(N, 4) corner form -> (N, 4) center form."""
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 4)
    wh = np.maximum(corners[:, 2:] - corners[:, :2], 0.0)
    return np.concatenate([(corners[:, :2] + corners[:, 2:]) / 2.0, wh], axis=1)


def iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one corner-form box against (N, 4) corner-form boxes."""
    xx1 = np.maximum(box[0], others[:, 0])
    yy1 = np.maximum(box[1], others[:, 1])
    xx2 = np.minimum(box[2], others[:, 2])
    yy2 = np.minimum(box[3], others[:, 3])
    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    area_box = (box[2] - box[0]) * (box[3] - box[1])
    area_others = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area_box + area_others - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner-form boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    xx1 = np.maximum(a[:, None, 0], b[None, :, 0])
    yy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    xx2 = np.minimum(a[:, None, 2], b[None, :, 2])
    yy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def box_iou_tensor(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Differentiable pairwise IoU between center-form boxes.

    Args:
        a (torch.Tensor): (..., N, 4) boxes (cx, cy, w, h).
        b (torch.Tensor): (..., M, 4) boxes (cx, cy, w, h).

    Returns:
        torch.Tensor: (..., N, M) IoU values, 0 where the union is empty.
    """
    a1, a2 = a[..., :2] - a[..., 2:] / 2, a[..., :2] + a[..., 2:] / 2
    b1, b2 = b[..., :2] - b[..., 2:] / 2, b[..., :2] + b[..., 2:] / 2
    lo = torch.maximum(a1.unsqueeze(-2), b1.unsqueeze(-3))
    hi = torch.minimum(a2.unsqueeze(-2), b2.unsqueeze(-3))
    inter = (hi - lo).clamp(min=0).prod(dim=-1)
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    union = area_a.unsqueeze(-1) + area_b.unsqueeze(-2) - inter
    positive = union > 0
    safe_union = torch.where(positive, union, torch.ones_like(union))
    return torch.where(positive, inter / safe_union, torch.zeros_like(union))


def ciou_loss_tensor(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """
    Elementwise CIoU loss between center-form boxes.

    loss = 1 - IoU + rho^2 / c^2 + alpha * v, with rho the center distance,
    c the diagonal of the smallest enclosing box,
    v = 4 / pi^2 * (atan(w_gt / h_gt) - atan(w / h))^2 and
    alpha = v / ((1 - IoU) + v). alpha is differentiated, not detached.

    Args:
        pred (torch.Tensor): (..., 4) predicted boxes.
        gt (torch.Tensor): (..., 4) target boxes, w and h > 0.

    Returns:
        torch.Tensor: (...) loss values.
    """
    p1, p2 = pred[..., :2] - pred[..., 2:] / 2, pred[..., :2] + pred[..., 2:] / 2
    g1, g2 = gt[..., :2] - gt[..., 2:] / 2, gt[..., :2] + gt[..., 2:] / 2

    inter = (torch.minimum(p2, g2) - torch.maximum(p1, g1)).clamp(min=0).prod(dim=-1)
    union = pred[..., 2] * pred[..., 3] + gt[..., 2] * gt[..., 3] - inter
    has_union = union > 0
    iou_value = torch.where(
        has_union,
        inter / torch.where(has_union, union, torch.ones_like(union)),
        torch.zeros_like(union),
    )

    enclose = torch.maximum(p2, g2) - torch.minimum(p1, g1)
    c2 = (enclose**2).sum(dim=-1)
    rho2 = ((pred[..., :2] - gt[..., :2]) ** 2).sum(dim=-1)

    # atan2 keeps the aspect term bounded and differentiable when h == 0
    v = (4.0 / math.pi**2) * (
        torch.atan2(gt[..., 2], gt[..., 3]) - torch.atan2(pred[..., 2], pred[..., 3])
    ) ** 2
    denom = (1.0 - iou_value) + v
    has_denom = denom > 0
    alpha = torch.where(
        has_denom,
        v / torch.where(has_denom, denom, torch.ones_like(denom)),
        torch.zeros_like(denom),
    )
    return 1.0 - iou_value + rho2 / c2 + alpha * v


def ciou_loss(pred: BBox, gt: BBox) -> Tuple[float, np.ndarray]:
    """
    CIoU loss of one predicted box and its analytic gradient.

    Args:
        pred (BBox): predicted box.
        gt (BBox): target box, must have positive extents.

    Returns:
        Tuple[float, np.ndarray]: the loss and d(loss)/d(cx, cy, w, h) of pred.
    """
    if gt.w <= 0 or gt.h <= 0:
        raise PreconditionError("CIoU target box must have w > 0 and h > 0")
    pred_t = torch.tensor(pred.as_array(), dtype=torch.float64, requires_grad=True)
    gt_t = torch.tensor(gt.as_array(), dtype=torch.float64)
    loss = ciou_loss_tensor(pred_t, gt_t)
    (grad,) = torch.autograd.grad(loss, pred_t)
    return float(loss.item()), grad.numpy()


def detections_to_arrays(
    detections: Sequence[Detection],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Stack detections into corner-form boxes, filtering scores and class ids.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: (N, 4) corners, (N,) scores,
            (N,) class ids.
    """
    if not detections:
        return np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64)
    corners = np.array([d.box.corners for d in detections], dtype=np.float64)
    scores = np.array([d.score for d in detections], dtype=np.float64)
    class_ids = np.array([d.class_id for d in detections], dtype=np.int64)
    return corners, scores, class_ids
