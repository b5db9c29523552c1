"""Latency-attack objectives over raw detector outputs.

Every objective is written so that gradient *ascent* strengthens the attack.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from errors import PreconditionError
from geometry.boxes import Detection, box_iou_tensor
from prediction.predictor_model import DecodedOutputs, RawPrediction, decode_tensors

FAMILIES = ("overload", "phantom", "daedalus", "targeted")
CONFIDENCE_MODES = ("objectness_class", "objectness")
FAMILY_LABELS = {"daedalus": "daedalus-like"}


def family_label(family: str) -> str:
    return FAMILY_LABELS.get(family, family)


@dataclass(frozen=True)
class AttackConfig:
    family: str = "overload"
    rho: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.0
    target_class: Optional[int] = None
    region_mask: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    confidence_mode: str = "objectness_class"
    top_m: int = 100
    conf_threshold: float = 0.25

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PreconditionError(
                f"Unknown attack family '{self.family}'. Must be one of {FAMILIES}"
            )
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise PreconditionError(
                f"Unknown confidence mode '{self.confidence_mode}'. "
                f"Must be one of {CONFIDENCE_MODES}"
            )
        if self.rho < 0:
            raise PreconditionError(f"rho must be non-negative. Given {self.rho}")
        if self.lambda3 < 0:
            raise PreconditionError(f"lambda3 must be non-negative. Given {self.lambda3}")
        if self.top_m < 2:
            raise PreconditionError("top_m must be at least 2")
        if self.family == "targeted" and self.target_class is None:
            raise PreconditionError("the targeted family requires a target_class")


def _confidence(decoded: DecodedOutputs, mode: str) -> torch.Tensor:
    if mode == "objectness" and decoded.objectness_head:
        return decoded.objectness
    return decoded.scores


def _normalized_area(decoded: DecodedOutputs, image_size: Tuple[int, int]) -> torch.Tensor:
    """(B,) mean box area as a fraction of the image."""
    height, width = image_size
    areas = decoded.boxes[..., 2] * decoded.boxes[..., 3] / float(height * width)
    return areas.mean(dim=1)


def _max_iou_term(
    decoded: DecodedOutputs,
    orig_dets: Sequence[Sequence[Detection]],
    conf_threshold: float,
) -> torch.Tensor:
    """(B,) mean over original detections of 1 - max IoU with a confident candidate."""
    terms = []
    dtype = decoded.boxes.dtype
    for b, dets in enumerate(orig_dets):
        if len(dets) == 0:
            terms.append(decoded.boxes[b, :0, 0].sum())
            continue
        confident = (decoded.scores[b] > conf_threshold).detach()
        if not bool(confident.any()):
            terms.append(decoded.boxes[b, :0, 0].sum() + 1.0)
            continue
        originals = torch.tensor(
            [d.box.as_array() for d in dets], dtype=dtype, device=decoded.boxes.device
        )
        ious = box_iou_tensor(originals, decoded.boxes[b][confident])
        terms.append((1.0 - ious.max(dim=1).values).mean())
    return torch.stack(terms)


def _dispersion(decoded: DecodedOutputs, top_m: int) -> torch.Tensor:
    """(B,) mean pairwise IoU among the top-M candidates by filtering score."""
    m = min(top_m, decoded.scores.shape[1])
    if m < 2:
        return decoded.scores.sum(dim=1) * 0.0
    top = decoded.scores.detach().topk(m, dim=1).indices
    boxes = torch.gather(decoded.boxes, 1, top.unsqueeze(-1).expand(-1, -1, 4))
    ious = box_iou_tensor(boxes, boxes)
    off_diagonal = ious.sum(dim=(1, 2)) - torch.diagonal(ious, dim1=1, dim2=2).sum(dim=1)
    return off_diagonal / (m * (m - 1))


def _region_cells(decoded: DecodedOutputs, region_mask: np.ndarray) -> torch.Tensor:
    """(B, A) bool: candidate centers falling on non-zero mask pixels."""
    mask = torch.as_tensor(np.asarray(region_mask) > 0, device=decoded.boxes.device)
    if mask.dim() == 2:
        mask = mask.unsqueeze(0).expand(decoded.boxes.shape[0], -1, -1)
    height, width = mask.shape[1], mask.shape[2]
    centers = decoded.boxes[..., :2].detach()
    cols = centers[..., 0].floor().long().clamp(0, width - 1)
    rows = centers[..., 1].floor().long().clamp(0, height - 1)
    batch = torch.arange(mask.shape[0], device=mask.device).unsqueeze(1)
    return mask[batch, rows, cols]


def per_image_attack_loss(
    raw: RawPrediction,
    cfg: AttackConfig,
    orig_dets: Optional[Sequence[Sequence[Detection]]] = None,
) -> torch.Tensor:
    """
    (B,) attack objective of each image in the batch.

    overload:  L_conf, the mean candidate confidence
    phantom:   L_conf - rho * (lambda1 * L_bbox + lambda2 * L_maxIoU)
    daedalus:  L_conf - rho * (pairwise IoU of the top-M candidates + L_bbox)
    targeted:  mean of p_target * objectness over candidates centered in the region
    """
    decoded = decode_tensors(raw)
    if cfg.family == "targeted":
        probs = decoded.class_probs[..., cfg.target_class] * decoded.objectness
        if cfg.region_mask is None:
            return probs.mean(dim=1)
        inside = _region_cells(decoded, cfg.region_mask).to(probs.dtype)
        return (probs * inside).sum(dim=1) / inside.sum(dim=1).clamp(min=1.0)

    if cfg.family == "phantom" and orig_dets is None:
        raise PreconditionError("the phantom family requires clean detections")
    l_conf = _confidence(decoded, cfg.confidence_mode).mean(dim=1)
    if cfg.family == "overload" or cfg.rho == 0.0:
        return l_conf

    l_bbox = _normalized_area(decoded, raw.image_size)
    if cfg.family == "phantom":
        if len(orig_dets) != raw.batch_size:
            raise PreconditionError(
                f"{len(orig_dets)} clean detection lists for a batch of {raw.batch_size}"
            )
        l_max_iou = _max_iou_term(decoded, orig_dets, cfg.conf_threshold)
        return l_conf - cfg.rho * (cfg.lambda1 * l_bbox + cfg.lambda2 * l_max_iou)

    return l_conf - cfg.rho * (_dispersion(decoded, cfg.top_m) + l_bbox)


def attack_loss_tensor(
    raw: RawPrediction,
    cfg: AttackConfig,
    orig_dets: Optional[Sequence[Sequence[Detection]]] = None,
) -> torch.Tensor:
    """Batch objective: sum of the per-image objectives (images stay independent)."""
    return per_image_attack_loss(raw, cfg, orig_dets).sum()


def attack_loss(
    family: str,
    raw: RawPrediction,
    orig_dets: Optional[List[Detection]],
    cfg: AttackConfig,
) -> Tuple[float, np.ndarray]:
    """
    Attack objective of a single-image prediction and its gradient w.r.t. the raw outputs.

    Args:
        family (str): loss family; overrides cfg.family.
        raw (RawPrediction): single-image head outputs.
        orig_dets (list of Detection, optional): post-NMS detections on the
            clean image, required by the phantom family.
        cfg (AttackConfig): weights and options.
    """
    if raw.batch_size != 1:
        raise PreconditionError("attack_loss expects a single-image prediction")
    if family != cfg.family:
        cfg = replace(cfg, family=family)
    leaf = raw.outputs.detach().clone().requires_grad_(True)
    batched = None if orig_dets is None else [list(orig_dets)]
    value = attack_loss_tensor(raw.with_outputs(leaf), cfg, batched)
    (grad,) = torch.autograd.grad(value, leaf)
    return float(value.item()), grad.detach().cpu().numpy()
