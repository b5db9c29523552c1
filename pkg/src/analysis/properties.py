"""Empirical checks of how latency attacks and background-attentive training behave.

- loss_correlation: do PGD trajectories driven by two different losses move
  the detector outputs the same way?
- boundary_margin: how far must an image move along a direction before a
  candidate in a region enters NMS?
- phantom_stats: where do the attack's phantom detections land?
- monotonicity_sweep: does the attacked candidate count grow with the
  perturbable area?
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from scipy.stats import spearmanr

from attacks.losses import AttackConfig
from attacks.pgd import (
    PGD,
    Objective,
    PerturbationBudget,
    attack_objective,
    selector_objective,
)
from defense.masks import background_mask, build_masks
from errors import PreconditionError
from geometry.boxes import detections_to_arrays, iou_matrix
from logger import get_logger
from nms.engine import NmsConfig
from prediction.predictor_model import (
    Detector,
    RawPrediction,
    clip_corners,
    compute_loss,
    decode_tensors,
)
from preprocessing.targets import assign_targets, stack_targets
from schema.dataset_schema import GroundTruth

logger = get_logger(task_name="analysis")

CORRELATION_SELECTORS = ("adv", "obj", "cls", "ciou", "total")
REGION_KINDS = ("background", "object")


def output_vector(raw: RawPrediction) -> np.ndarray:
    """(B, A * (1 + K)) decoded objectness and class scores per image."""
    with torch.no_grad():
        decoded = decode_tensors(raw.with_outputs(raw.outputs.detach()))
        stacked = torch.cat([decoded.objectness.unsqueeze(-1), decoded.class_probs], dim=-1)
    return stacked.flatten(1).double().cpu().numpy()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    return cosine_similarity(a - a.mean(), b - b.mean())


@dataclass
class CorrelationTrace:
    loss_a: str
    loss_b: str
    cosine: np.ndarray  # (n_images, K + 1)
    pearson: np.ndarray  # (n_images, K + 1)

    @property
    def median_cosine(self) -> np.ndarray:
        return np.median(self.cosine, axis=0)

    @property
    def median_pearson(self) -> np.ndarray:
        return np.median(self.pearson, axis=0)

    def to_dataframe(self) -> pd.DataFrame:
        n_images, n_steps = self.cosine.shape
        return pd.DataFrame(
            {
                "pair": f"{self.loss_a}/{self.loss_b}",
                "image": np.repeat(np.arange(n_images), n_steps),
                "step": np.tile(np.arange(n_steps), n_images),
                "cosine": self.cosine.ravel(),
                "pearson": self.pearson.ravel(),
            }
        )


def _selector_objective(
    detector: Detector,
    selector: str,
    gts: Sequence[GroundTruth],
    attack_cfg: AttackConfig,
) -> Objective:
    if selector not in CORRELATION_SELECTORS:
        raise PreconditionError(
            f"Unknown loss '{selector}'. Must be one of {CORRELATION_SELECTORS}"
        )
    if selector == "adv":
        return attack_objective(attack_cfg)
    return selector_objective(detector, gts, selector)


def _trajectory_outputs(
    detector: Detector,
    images: np.ndarray,
    objective: Objective,
    budget: PerturbationBudget,
    seed: int,
) -> List[np.ndarray]:
    outputs: List[np.ndarray] = []
    attacker = PGD(detector, budget, objective, seed=seed)
    attacker.attack(images, on_step=lambda step, raw: outputs.append(output_vector(raw)))
    return outputs


def loss_correlation(
    detector: Detector,
    images: np.ndarray,
    loss_a: str,
    loss_b: str,
    steps: int,
    budget: PerturbationBudget,
    gts: Optional[Sequence[GroundTruth]] = None,
    attack_cfg: Optional[AttackConfig] = None,
    seed: int = 0,
) -> CorrelationTrace:
    """
    Cosine similarity and Pearson coefficient between the detector outputs of
    two PGD trajectories that start together and ascend different losses.

    Args:
        loss_a, loss_b: "adv" (the attack objective) or a detector loss term.
        steps (int): PGD steps K; 0 compares the clean outputs.
        budget (PerturbationBudget): norm, epsilon and step size (its step
            count is replaced by `steps`).
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    gts = list(gts) if gts is not None else [GroundTruth() for _ in range(images.shape[0])]
    attack_cfg = attack_cfg or AttackConfig(family="overload")
    if steps == 0:
        with torch.no_grad():
            clean = output_vector(detector.forward(images))
        trajectory_a = trajectory_b = [clean]
    else:
        budget = PerturbationBudget(
            norm=budget.norm,
            epsilon=budget.epsilon,
            steps=steps,
            step_size=budget.step_size,
            random_start=budget.random_start,
        )
        trajectory_a = _trajectory_outputs(
            detector, images, _selector_objective(detector, loss_a, gts, attack_cfg), budget, seed
        )
        if loss_b == loss_a:
            trajectory_b = trajectory_a
        else:
            trajectory_b = _trajectory_outputs(
                detector, images, _selector_objective(detector, loss_b, gts, attack_cfg), budget, seed
            )

    n_images, n_steps = images.shape[0], len(trajectory_a)
    cosine = np.zeros((n_images, n_steps))
    pearson_r = np.zeros((n_images, n_steps))
    for k, (out_a, out_b) in enumerate(zip(trajectory_a, trajectory_b)):
        for i in range(n_images):
            cosine[i, k] = cosine_similarity(out_a[i], out_b[i])
            pearson_r[i, k] = pearson(out_a[i], out_b[i])
    return CorrelationTrace(loss_a=loss_a, loss_b=loss_b, cosine=cosine, pearson=pearson_r)


@dataclass
class MarginEstimate:
    region: str
    margin: float  # inf when no crossing was found
    crossed: bool
    lower: float
    upper: float
    iterations: int
    t_max: float
    norm: str
    upper_bound: bool = True

    def as_dict(self) -> Dict:
        return {
            "region": self.region,
            "margin": self.margin if self.crossed else None,
            "crossed": self.crossed,
            "lower": self.lower,
            "upper": self.upper,
            "iterations": self.iterations,
            "t_max": self.t_max,
            "norm": self.norm,
            "upper_bound": self.upper_bound,
        }


def region_mask(gt: GroundTruth, region: str, height: int, width: int) -> np.ndarray:
    """1 on the background (outside every box) or on the objects (inside a box)."""
    if region not in REGION_KINDS:
        raise PreconditionError(f"Unknown region '{region}'. Must be one of {REGION_KINDS}")
    background = background_mask(gt, height, width)
    return background if region == "background" else 1.0 - background


def objectness_direction(
    detector: Detector, image: np.ndarray, gt: GroundTruth, mask: np.ndarray, norm: str
) -> np.ndarray:
    """Unit-norm L_obj ascent direction restricted to the mask."""
    x = detector.to_tensor(image).double().requires_grad_(True)
    raw = detector.forward_tensor(x.to(detector.dtype))
    targets = stack_targets([assign_targets(gt, detector.layout)])
    l_obj = compute_loss(raw, targets, detector.loss_weights).obj
    (grad,) = torch.autograd.grad(l_obj, x)
    grad = grad[0].permute(1, 2, 0).cpu().numpy() * mask[..., None]
    if norm == "linf":
        return np.sign(grad)
    length = np.linalg.norm(grad)
    return grad / length if length > 0 else np.zeros_like(grad)


def boundary_margin(
    detector: Detector,
    image: np.ndarray,
    region: str,
    c_th: float,
    gt: Optional[GroundTruth] = None,
    direction: Optional[np.ndarray] = None,
    t_max: float = 20.0,
    scan_step: float = 0.25,
    tolerance: float = 1e-3,
    norm: str = "l2",
    exclude_clean_hits: bool = False,
) -> MarginEstimate:
    """
    Directional upper bound on the perturbation size at which some candidate
    centered in the region reaches a filtering score of c_th.

    The scale t is scanned on a fixed grid up to t_max and the first crossing
    is refined by bisection to `tolerance`; the margin is t * ||direction||.
    With `exclude_clean_hits`, candidates already at or above c_th on the
    clean image are ignored.
    """
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[:2]
    gt = gt or GroundTruth()
    mask = region_mask(gt, region, height, width)
    if direction is None:
        direction = objectness_direction(detector, image, gt, mask, norm)
    direction = np.asarray(direction, dtype=np.float64)
    flat = direction.ravel()
    length = float(np.abs(flat).max() if norm == "linf" else np.linalg.norm(flat)) if flat.size else 0.0

    clean_hits = None
    if exclude_clean_hits:
        clean_hits = _region_hits(detector, image, mask, c_th)

    iterations = 0

    def crosses(t: float) -> bool:
        nonlocal iterations
        iterations += 1
        perturbed = np.clip(image + t * direction, 0.0, 1.0)
        hits = _region_hits(detector, perturbed, mask, c_th)
        if clean_hits is not None:
            hits &= ~clean_hits
        return bool(hits.any())

    def estimate(crossed: bool, lower: float, upper: float) -> MarginEstimate:
        return MarginEstimate(
            region=region,
            margin=upper * length if crossed else float("inf"),
            crossed=crossed,
            lower=lower * length,
            upper=upper * length if crossed else float("inf"),
            iterations=iterations,
            t_max=t_max,
            norm=norm,
        )

    if mask.sum() == 0:
        return estimate(False, 0.0, 0.0)
    if crosses(0.0):
        return estimate(True, 0.0, 0.0)
    if length == 0:
        return estimate(False, 0.0, 0.0)

    lower = 0.0
    n_scan = int(np.floor(t_max / scan_step + 1e-9))
    for k in range(1, n_scan + 1):
        t = k * scan_step
        if crosses(t):
            upper = t
            while upper - lower > tolerance:
                middle = 0.5 * (lower + upper)
                if crosses(middle):
                    upper = middle
                else:
                    lower = middle
            return estimate(True, lower, upper)
        lower = t
    return estimate(False, lower, lower)


def _region_hits(
    detector: Detector, image: np.ndarray, mask: np.ndarray, c_th: float
) -> np.ndarray:
    """(A,) cells centered on the mask whose filtering score is at least c_th."""
    with torch.no_grad():
        decoded = decode_tensors(detector.forward(image.astype(np.float32)))
    scores = decoded.scores[0].double().cpu().numpy()
    centers = decoded.boxes[0, :, :2].double().cpu().numpy()
    height, width = mask.shape
    cols = np.clip(np.floor(centers[:, 0]).astype(np.int64), 0, width - 1)
    rows = np.clip(np.floor(centers[:, 1]).astype(np.int64), 0, height - 1)
    return (scores >= c_th) & (mask[rows, cols] > 0)


@dataclass
class PhantomStats:
    per_image: pd.DataFrame = field(
        default_factory=lambda: pd.DataFrame(
            columns=["image", "phantoms", "on_object", "off_object", "mean_delta_mass"]
        )
    )

    @property
    def total(self) -> int:
        return int(self.per_image["phantoms"].sum())

    @property
    def off_object_share(self) -> float:
        """Share of images with at least as many off-object as on-object phantoms."""
        if self.per_image.empty:
            return 0.0
        return float((self.per_image["off_object"] >= self.per_image["on_object"]).mean())

    def summary(self) -> Dict:
        return {
            "n_images": int(len(self.per_image)),
            "phantoms": self.total,
            "on_object": int(self.per_image["on_object"].sum()),
            "off_object": int(self.per_image["off_object"].sum()),
            "share_off_at_least_on": self.off_object_share,
        }


def phantom_stats(
    detector: Detector,
    clean_images: np.ndarray,
    attacked_images: np.ndarray,
    gts: Sequence[GroundTruth],
    nms_cfg: NmsConfig,
    deltas: Optional[np.ndarray] = None,
    iou_threshold: float = 0.5,
) -> PhantomStats:
    """
    Phantoms are post-filter candidates of the attacked image whose IoU with
    every clean post-NMS detection is below `iou_threshold`. A phantom is
    on-object when its center lies inside a ground-truth box.

    Args:
        deltas (np.ndarray, optional): perturbations; defaults to attacked - clean.
    """
    clean_images = np.asarray(clean_images)
    attacked_images = np.asarray(attacked_images)
    if deltas is None:
        deltas = attacked_images.astype(np.float64) - clean_images.astype(np.float64)
    clean_dets = detector.predict(clean_images, nms_cfg)
    height, width = clean_images.shape[1:3]

    with torch.no_grad():
        decoded = decode_tensors(detector.forward(attacked_images))
    scores = decoded.scores.double().cpu().numpy()
    boxes = decoded.boxes.double().cpu().numpy()

    rows = []
    for index, gt in enumerate(gts):
        passing = scores[index] > nms_cfg.conf_threshold
        corners = clip_corners(boxes[index][passing], (height, width))
        kept_corners, _, _ = detections_to_arrays(clean_dets[index])
        if kept_corners.shape[0] and corners.shape[0]:
            best = iou_matrix(corners, kept_corners).max(axis=1)
        else:
            best = np.zeros(corners.shape[0])
        phantoms = corners[best < iou_threshold]

        centers_x = (phantoms[:, 0] + phantoms[:, 2]) / 2.0
        centers_y = (phantoms[:, 1] + phantoms[:, 3]) / 2.0
        gt_corners = gt.corners()
        inside = np.zeros(phantoms.shape[0], dtype=bool)
        if gt_corners.shape[0]:
            inside = (
                (centers_x[:, None] >= gt_corners[None, :, 0])
                & (centers_x[:, None] <= gt_corners[None, :, 2])
                & (centers_y[:, None] >= gt_corners[None, :, 1])
                & (centers_y[:, None] <= gt_corners[None, :, 3])
            ).any(axis=1)

        magnitude = np.abs(deltas[index]).sum(axis=-1)
        masses = []
        for x1, y1, x2, y2 in phantoms:
            c1, r1 = int(np.floor(x1)), int(np.floor(y1))
            c2, r2 = int(np.ceil(x2)), int(np.ceil(y2))
            masses.append(float(magnitude[r1:r2, c1:c2].sum()))

        rows.append(
            {
                "image": index,
                "phantoms": int(phantoms.shape[0]),
                "on_object": int(inside.sum()),
                "off_object": int((~inside).sum()),
                "mean_delta_mass": float(np.mean(masses)) if masses else 0.0,
            }
        )
    return PhantomStats(per_image=pd.DataFrame(rows))


@dataclass
class SweepResult:
    table: pd.DataFrame  # ratio, perturbable_pixels, mean_attacked_count
    clean_count: float
    spearman: float


def monotonicity_sweep(
    detector: Detector,
    images: np.ndarray,
    gts: Sequence[GroundTruth],
    ratios: Sequence[float],
    budget: PerturbationBudget,
    attack_cfg: Optional[AttackConfig] = None,
    seed: int = 0,
) -> SweepResult:
    """
    Mean attacked candidate count of a masked attack for each mask ratio, and
    the Spearman rank correlation between perturbable pixels and that count.
    """
    ratios = [float(r) for r in ratios]
    if ratios != sorted(ratios):
        raise PreconditionError(f"ratios must be sorted ascending. Given {ratios}")
    images = np.asarray(images)
    height, width = images.shape[1:3]
    attack_cfg = attack_cfg or AttackConfig(family="overload")
    attacker = PGD(
        detector,
        budget,
        attack_objective(attack_cfg),
        conf_threshold=attack_cfg.conf_threshold,
        seed=seed,
    )
    clean_count = float(detector.candidate_counts(images, attack_cfg.conf_threshold).mean())

    rows = []
    for ratio in ratios:
        masks = build_masks(gts, ratio, height, width)
        result = attacker.attack(images, mask=masks)
        rows.append(
            {
                "ratio": ratio,
                "perturbable_pixels": float(masks.sum(axis=(1, 2)).mean()),
                "mean_attacked_count": float(result.final_counts.mean()),
            }
        )
        logger.info(
            f"Mask ratio {ratio}: mean attacked count {rows[-1]['mean_attacked_count']:.1f}"
        )
    table = pd.DataFrame(rows)
    rho = float("nan")
    if len(rows) >= 2:
        rho = float(spearmanr(table["perturbable_pixels"], table["mean_attacked_count"]).correlation)
    return SweepResult(table=table, clean_count=clean_count, spearman=rho)
