import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from attacks.losses import AttackConfig, family_label, per_image_attack_loss
from defense.masks import background_mask
from errors import PreconditionError
from geometry.boxes import Detection
from logger import get_logger
from nms.engine import NmsConfig
from prediction.predictor_model import (
    Detector,
    RawPrediction,
    candidate_counts,
    per_image_losses,
)
from preprocessing.targets import assign_targets, stack_targets
from schema.dataset_schema import GroundTruth, SceneDataset
from utils import make_rng

logger = get_logger(task_name="pgd")

NORMS = ("linf", "l2")
REFERENCE_IMAGE_PIXELS = 640 * 640

# objective(raw, delta) -> (B,) values to ascend
Objective = Callable[[RawPrediction, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class PerturbationBudget:
    norm: str = "l2"
    epsilon: float = 7.0
    steps: int = 50
    step_size: Optional[float] = None
    random_start: bool = False

    def __post_init__(self):
        if self.norm not in NORMS:
            raise PreconditionError(f"Unknown norm '{self.norm}'. Must be one of {NORMS}")
        if not self.epsilon > 0:
            raise PreconditionError(f"epsilon must be positive. Given {self.epsilon}")
        if self.steps < 1:
            raise PreconditionError(f"steps must be at least 1. Given {self.steps}")
        if self.step_size is not None and not self.step_size > 0:
            raise PreconditionError(f"step_size must be positive. Given {self.step_size}")

    @property
    def alpha(self) -> float:
        """Per-step size; 2.5 * epsilon / steps unless set explicitly."""
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps

    def as_dict(self) -> Dict:
        return dict(asdict(self), alpha=self.alpha)


def scaled_l2_epsilon(reference_epsilon: float, height: int, width: int) -> float:
    """Rescale an l2 budget quoted for 640x640 images to an H x W image."""
    return reference_epsilon * math.sqrt(height * width / REFERENCE_IMAGE_PIXELS)


def project(
    delta: torch.Tensor,
    x: torch.Tensor,
    budget: PerturbationBudget,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mask, project onto the epsilon-ball of the budget's norm, then keep x + delta in [0, 1]."""
    if mask is not None:
        delta = delta * mask
    if budget.norm == "linf":
        delta = delta.clamp(-budget.epsilon, budget.epsilon)
    else:
        norms = delta.flatten(1).norm(dim=1)
        too_long = norms > budget.epsilon
        factor = torch.where(
            too_long,
            budget.epsilon / torch.where(too_long, norms, torch.ones_like(norms)),
            torch.ones_like(norms),
        )
        delta = delta * factor.view(-1, 1, 1, 1)
    return (x + delta).clamp(0.0, 1.0) - x


def perturbation_norm(delta: np.ndarray, norm: str) -> np.ndarray:
    """(B,) norms of (B, H, W, 3) perturbations."""
    flat = np.asarray(delta, dtype=np.float64).reshape(delta.shape[0], -1)
    if norm == "linf":
        return np.abs(flat).max(axis=1) if flat.size else np.zeros(delta.shape[0])
    return np.linalg.norm(flat, axis=1)


@dataclass
class PgdResult:
    delta: np.ndarray  # (B, H, W, 3) float64
    adversarial: np.ndarray  # (B, H, W, 3) float32, clipped to [0, 1]
    losses: np.ndarray  # (K + 1, B); row 0 is the starting point
    counts: np.ndarray  # (K + 1, B) candidates passing the confidence filter

    def trace(self, index: int) -> List[Dict]:
        return [
            {"step": k, "loss": float(self.losses[k, index]), "count": int(self.counts[k, index])}
            for k in range(self.losses.shape[0])
        ]

    @property
    def clean_counts(self) -> np.ndarray:
        return self.counts[0]

    @property
    def final_counts(self) -> np.ndarray:
        return self.counts[-1]


class PGD:
    """
    Projected gradient ascent on an objective of the detector's raw outputs.

    Each step: delta <- Proj(delta + alpha * g), with g = sign(grad) for linf and
    g = grad / ||grad||_2 per image for l2. An optional {0, 1} mask is applied to
    the gradient and inside the projection, so masked pixels are never perturbed.
    """

    def __init__(
        self,
        detector: Detector,
        budget: PerturbationBudget,
        objective: Objective,
        conf_threshold: float = 0.25,
        seed: int = 0,
    ):
        self.detector = detector
        self.budget = budget
        self.objective = objective
        self.conf_threshold = conf_threshold
        self.seed = seed

    def _random_start(self, shape: Tuple[int, ...], indices: Sequence[int]) -> torch.Tensor:
        starts = []
        for index in indices:
            rng = make_rng(self.seed, int(index))
            if self.budget.norm == "linf":
                noise = rng.uniform(-self.budget.epsilon, self.budget.epsilon, size=shape)
            else:
                noise = rng.standard_normal(size=shape)
                noise *= self.budget.epsilon * rng.uniform() / max(np.linalg.norm(noise), 1e-12)
            starts.append(noise)
        return torch.from_numpy(np.stack(starts))

    def attack(
        self,
        images: np.ndarray,
        mask: Optional[np.ndarray] = None,
        indices: Optional[Sequence[int]] = None,
        on_step: Optional[Callable[[int, RawPrediction], None]] = None,
    ) -> PgdResult:
        """
        Run the attack on a batch.

        Args:
            images (np.ndarray): (B, H, W, 3) or (H, W, 3) clean pixels.
            mask (np.ndarray, optional): (B, H, W) or (H, W) perturbation mask.
            indices (Sequence[int], optional): dataset indices of the images,
                used to derive per-image random starts.
            on_step (callable, optional): called with (step, raw outputs) at
                every iterate, the starting point included.
        """
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        x = self.detector.to_tensor(images).double()
        batch = x.shape[0]
        indices = list(range(batch)) if indices is None else list(indices)

        mask_t = None
        if mask is not None:
            mask_t = torch.as_tensor(np.asarray(mask), dtype=torch.float64)
            if mask_t.dim() == 2:
                mask_t = mask_t.unsqueeze(0).expand(batch, -1, -1)
            if tuple(mask_t.shape) != (batch, x.shape[2], x.shape[3]):
                raise PreconditionError(
                    f"Mask shape {tuple(mask_t.shape)} does not match images {images.shape}"
                )
            mask_t = mask_t.unsqueeze(1)

        if self.budget.random_start:
            delta = project(self._random_start(tuple(x.shape[1:]), indices), x, self.budget, mask_t)
        else:
            delta = torch.zeros_like(x)

        steps = self.budget.steps
        losses, counts = [], []
        for step in range(steps + 1):
            ascend = step < steps
            delta_leaf = delta.detach().requires_grad_(ascend)
            with torch.set_grad_enabled(ascend):
                raw = self.detector.forward_tensor((x + delta_leaf).to(self.detector.dtype))
                values = self.objective(raw, delta_leaf)
            losses.append(values.detach().double().cpu().numpy())
            counts.append(candidate_counts(raw, self.conf_threshold))
            if on_step is not None:
                on_step(step, raw)
            if not ascend:
                break
            (grad,) = torch.autograd.grad(values.sum(), delta_leaf)
            if mask_t is not None:
                grad = grad * mask_t
            if self.budget.norm == "linf":
                direction = grad.sign()
            else:
                norms = grad.flatten(1).norm(dim=1).view(-1, 1, 1, 1)
                nonzero = norms > 0
                direction = torch.where(
                    nonzero,
                    grad / torch.where(nonzero, norms, torch.ones_like(norms)),
                    torch.zeros_like(grad),
                )
            delta = project(delta + self.budget.alpha * direction, x, self.budget, mask_t)

        delta = delta.detach()
        adversarial = (x + delta).clamp(0.0, 1.0)
        return PgdResult(
            delta=delta.permute(0, 2, 3, 1).cpu().numpy(),
            adversarial=adversarial.permute(0, 2, 3, 1).float().cpu().numpy(),
            losses=np.stack(losses),
            counts=np.stack(counts),
        )

    def __repr__(self):
        return (
            f"PGD(norm={self.budget.norm}, epsilon={self.budget.epsilon}, "
            f"alpha={self.budget.alpha}, steps={self.budget.steps})"
        )


def attack_objective(
    cfg: AttackConfig, orig_dets: Optional[Sequence[Sequence[Detection]]] = None
) -> Objective:
    """Attack loss of the configured family, minus lambda3 * ||delta||_2^2 when lambda3 > 0."""

    def objective(raw: RawPrediction, delta: torch.Tensor) -> torch.Tensor:
        values = per_image_attack_loss(raw, cfg, orig_dets)
        if cfg.lambda3 > 0:
            values = values - cfg.lambda3 * delta.flatten(1).pow(2).sum(dim=1).to(values.dtype)
        return values

    return objective


def objectness_objective(detector: Detector, gts: Sequence[GroundTruth]) -> Objective:
    """Per-image L_obj against the ground truth."""
    targets = stack_targets([assign_targets(gt, detector.layout) for gt in gts])

    def objective(raw: RawPrediction, delta: torch.Tensor) -> torch.Tensor:
        return per_image_losses(raw, targets, detector.loss_weights).obj

    return objective


def selector_objective(
    detector: Detector, gts: Sequence[GroundTruth], selector: str
) -> Objective:
    """Per-image L_obj, L_cls, L_CIoU or L_total."""
    targets = stack_targets([assign_targets(gt, detector.layout) for gt in gts])

    def objective(raw: RawPrediction, delta: torch.Tensor) -> torch.Tensor:
        return per_image_losses(raw, targets, detector.loss_weights).select(selector)

    return objective


def _region_mask(cfg: AttackConfig, gt: Optional[GroundTruth], height: int, width: int):
    if cfg.family != "targeted" or cfg.region_mask is not None or gt is None:
        return cfg
    return replace(cfg, region_mask=background_mask(gt, height, width))


def pgd(
    detector: Detector,
    image: np.ndarray,
    gt_or_none: Optional[GroundTruth],
    family: str,
    budget: PerturbationBudget,
    cfg: AttackConfig,
    seed: int = 0,
    nms_cfg: Optional[NmsConfig] = None,
) -> Tuple[np.ndarray, List[Dict]]:
    """
    Attack one (H, W, 3) image.

    The phantom family preserves the clean post-NMS detections; the targeted
    family without an explicit region attacks the background of `gt_or_none`.

    Returns:
        Tuple[np.ndarray, List[Dict]]: the (H, W, 3) perturbation and the
            per-step trace of objective value and candidate count (step 0 is
            the starting point).
    """
    if family != cfg.family:
        cfg = replace(cfg, family=family)
    cfg = _region_mask(cfg, gt_or_none, detector.arch.image_height, detector.arch.image_width)
    nms_cfg = nms_cfg or NmsConfig(conf_threshold=cfg.conf_threshold)
    orig_dets = None
    if cfg.family == "phantom":
        orig_dets = detector.predict(np.asarray(image)[None], nms_cfg)
    attacker = PGD(
        detector,
        budget,
        attack_objective(cfg, orig_dets),
        conf_threshold=cfg.conf_threshold,
        seed=seed,
    )
    result = attacker.attack(image)
    return result.delta[0], result.trace(0)


@dataclass
class AttackRun:
    family: str
    budget: PerturbationBudget
    seed: int
    adversarial: np.ndarray
    delta: np.ndarray
    records: List[Dict] = field(default_factory=list)

    @property
    def clean_counts(self) -> np.ndarray:
        return np.array([r["clean_count"] for r in self.records], dtype=np.int64)

    @property
    def attacked_counts(self) -> np.ndarray:
        return np.array([r["attacked_count"] for r in self.records], dtype=np.int64)

    def summary(self) -> Dict:
        clean = self.clean_counts.astype(np.float64)
        attacked = self.attacked_counts.astype(np.float64)
        ratio = attacked / np.maximum(clean, 1.0)
        return {
            "family": family_label(self.family),
            "norm": self.budget.norm,
            "epsilon": self.budget.epsilon,
            "steps": self.budget.steps,
            "seed": self.seed,
            "n_images": len(self.records),
            "mean_clean_count": float(clean.mean()) if clean.size else 0.0,
            "mean_attacked_count": float(attacked.mean()) if attacked.size else 0.0,
            "share_at_least_10x": float((ratio >= 10.0).mean()) if ratio.size else 0.0,
        }


def attack_dataset(
    detector: Detector,
    dataset: SceneDataset,
    cfg: AttackConfig,
    budget: PerturbationBudget,
    nms_cfg: NmsConfig,
    seed: int = 0,
    batch_size: int = 16,
) -> AttackRun:
    """Per-image attacks over a dataset, run in batches of independent images."""
    height, width = dataset.schema.height, dataset.schema.width
    deltas, adversarial, records = [], [], []
    for start in range(0, len(dataset), batch_size):
        indices = np.arange(start, min(start + batch_size, len(dataset)))
        images = dataset.images[indices]
        gts = [dataset.ground_truths[i] for i in indices]
        batch_cfg = cfg
        if cfg.family == "targeted" and cfg.region_mask is None:
            batch_cfg = replace(
                cfg, region_mask=np.stack([background_mask(g, height, width) for g in gts])
            )
        orig_dets = detector.predict(images, nms_cfg) if cfg.family == "phantom" else None
        attacker = PGD(
            detector,
            budget,
            attack_objective(batch_cfg, orig_dets),
            conf_threshold=nms_cfg.conf_threshold,
            seed=seed,
        )
        result = attacker.attack(images, indices=indices)
        deltas.append(result.delta)
        adversarial.append(result.adversarial)
        for b, index in enumerate(indices):
            records.append(
                {
                    "image": int(index),
                    "family": family_label(cfg.family),
                    "norm": budget.norm,
                    "epsilon": budget.epsilon,
                    "steps": budget.steps,
                    "clean_count": int(result.clean_counts[b]),
                    "attacked_count": int(result.final_counts[b]),
                    "per_step_trace": result.trace(b),
                    "seed": seed,
                }
            )
        logger.info(
            f"Attacked images {indices[0]}..{indices[-1]}: mean count "
            f"{result.clean_counts.mean():.1f} -> {result.final_counts.mean():.1f}"
        )
    return AttackRun(
        family=cfg.family,
        budget=budget,
        seed=seed,
        adversarial=np.concatenate(adversarial),
        delta=np.concatenate(deltas),
        records=records,
    )
