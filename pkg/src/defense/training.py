"""Background-attentive adversarial training under a candidate-count budget."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from attacks.losses import AttackConfig
from attacks.pgd import PGD, PerturbationBudget, attack_dataset, objectness_objective
from defense.masks import build_masks
from errors import CapacityUnreachable, PreconditionError
from evaluation.metrics import map50
from logger import get_logger
from nms.engine import NmsConfig
from prediction.predictor_model import Detector, OptimizerConfig
from schema.dataset_schema import GroundTruth, SceneDataset

logger = get_logger(task_name="defense")

SCHEDULE_DIRECTIONS = ("decrease", "increase")
RATIO_DECIMALS = 10


@dataclass(frozen=True)
class ATConfig:
    epochs_per_stage: int = 10
    budget: PerturbationBudget = PerturbationBudget(norm="linf", epsilon=1.0 / 255, steps=4)
    start_ratio: float = 1.0
    ratio_step: float = 0.1
    max_ratio: float = 1.5
    schedule_direction: str = "decrease"
    optimizer: OptimizerConfig = OptimizerConfig()
    eval_attack: AttackConfig = AttackConfig(family="overload")
    eval_budget: PerturbationBudget = PerturbationBudget(norm="l2", epsilon=7.0, steps=50)
    nms: NmsConfig = NmsConfig()
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_stage < 1:
            raise PreconditionError("epochs_per_stage must be at least 1")
        if not self.start_ratio > 0:
            raise PreconditionError(f"start_ratio must be positive. Given {self.start_ratio}")
        if not self.ratio_step > 0:
            raise PreconditionError(f"ratio_step must be positive. Given {self.ratio_step}")
        if self.schedule_direction not in SCHEDULE_DIRECTIONS:
            raise PreconditionError(
                f"Unknown schedule direction '{self.schedule_direction}'. "
                f"Must be one of {SCHEDULE_DIRECTIONS}"
            )

    def ratio_at(self, stage: int) -> float:
        sign = -1.0 if self.schedule_direction == "decrease" else 1.0
        return round(self.start_ratio + sign * stage * self.ratio_step, RATIO_DECIMALS)

    def exhausted(self, ratio: float) -> bool:
        if self.schedule_direction == "decrease":
            return ratio < 0
        return ratio > self.max_ratio


def masked_pgd(
    detector: Detector,
    images: np.ndarray,
    gts: Sequence[GroundTruth],
    masks: np.ndarray,
    budget: PerturbationBudget,
    seed: int = 0,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Masked perturbation ascending L_obj.

    Args:
        images (np.ndarray): (B, H, W, 3) or a single (H, W, 3) image.
        gts: ground truth of each image.
        masks (np.ndarray): (B, H, W) or (H, W) {0, 1} masks; 0 is protected.
        budget (PerturbationBudget): norm, epsilon and steps.

    Returns:
        np.ndarray: delta^M with the shape of `images`, zero on every masked pixel.
    """
    single = np.asarray(images).ndim == 3
    batch = np.asarray(images)[None] if single else np.asarray(images)
    if isinstance(gts, GroundTruth):
        gts = [gts]
    masks = np.asarray(masks)
    if masks.shape[-2:] != batch.shape[1:3]:
        raise PreconditionError(
            f"Mask shape {masks.shape} does not match images {batch.shape}"
        )
    attacker = PGD(detector, budget, objectness_objective(detector, gts), seed=seed)
    delta = attacker.attack(batch, mask=masks, indices=indices).delta
    return delta[0] if single else delta


@dataclass
class StageResult:
    detector: Detector
    history: List[Dict] = field(default_factory=list)


def at_stage(
    params: Detector,
    dataset: SceneDataset,
    ratio: float,
    cfg: ATConfig,
) -> StageResult:
    """
    One stage of adversarial training at a fixed mask ratio.

    A copy of `params` is trained for `cfg.epochs_per_stage` epochs; every
    batch is replaced by its masked L_obj adversarial version before the
    optimizer step on the full detection loss.
    """
    height, width = dataset.schema.height, dataset.schema.width

    def perturb(model: Detector, images: np.ndarray, gts: List[GroundTruth], indices):
        masks = build_masks(gts, ratio, height, width)
        attacker = PGD(model, cfg.budget, objectness_objective(model, gts), seed=cfg.seed)
        result = attacker.attack(images, mask=masks, indices=indices)
        leaked = np.abs(result.delta * (1.0 - masks[..., None])).max()
        if leaked != 0.0:
            raise RuntimeError(f"Perturbation leaked onto protected pixels ({leaked})")
        return result.adversarial

    model = params.clone()
    history = model.fit(
        dataset,
        cfg.epochs_per_stage,
        cfg.optimizer,
        seed=cfg.seed,
        perturb=perturb,
    )
    return StageResult(detector=model, history=history)


def attacked_count_mean(
    detector: Detector, dataset: SceneDataset, cfg: ATConfig
) -> float:
    """Mean post-filter candidate count under the reference evaluation attack."""
    run = attack_dataset(
        detector, dataset, cfg.eval_attack, cfg.eval_budget, cfg.nms, seed=cfg.seed
    )
    return float(run.attacked_counts.mean())


@dataclass
class UnderloadResult:
    detector: Detector
    schedule_log: List[Dict]
    accepted_ratio: float
    c_max: float


def underload_train(
    params0: Detector,
    dataset: SceneDataset,
    at_cfg: ATConfig,
    c_max: float,
    validation: Optional[SceneDataset] = None,
) -> UnderloadResult:
    """
    Stage loop of background-attentive adversarial training.

    Each stage restarts from `params0`, trains at the current mask ratio and
    measures the mean attacked candidate count on the validation set. The
    first stage whose count is below `c_max` is accepted; otherwise the ratio
    moves by one step (down by default, shrinking the protected windows).

    Raises:
        CapacityUnreachable: when the ratio schedule is exhausted first. The
            exception carries the schedule log.
    """
    validation = validation if validation is not None else dataset
    schedule_log: List[Dict] = []
    if c_max <= 0:
        raise CapacityUnreachable(
            f"C_max = {c_max}: no candidate count can be below it",
            schedule_log=schedule_log,
        )
    stage = 0
    while True:
        ratio = at_cfg.ratio_at(stage)
        if at_cfg.exhausted(ratio):
            raise CapacityUnreachable(
                f"Mask ratio schedule exhausted at {ratio} without meeting "
                f"C_max = {c_max}",
                schedule_log=schedule_log,
            )
        logger.info(f"Stage {stage}: adversarial training at mask ratio {ratio}")
        result = at_stage(params0, dataset, ratio, at_cfg)
        attacked = attacked_count_mean(result.detector, validation, at_cfg)
        clean_dets = result.detector.predict(validation.images, at_cfg.nms)
        clean_map = map50(
            clean_dets, validation.ground_truths, validation.schema.num_classes
        ).map50
        accepted = attacked < c_max
        schedule_log.append(
            {
                "stage": stage,
                "ratio": ratio,
                "attacked_count_mean": attacked,
                "clean_map50": clean_map,
                "accepted": accepted,
            }
        )
        logger.info(
            f"Stage {stage}: ratio {ratio}, attacked count {attacked:.1f} "
            f"(C_max {c_max}), clean mAP50 {clean_map:.3f}"
        )
        if accepted:
            return UnderloadResult(
                detector=result.detector,
                schedule_log=schedule_log,
                accepted_ratio=ratio,
                c_max=c_max,
            )
        stage += 1
