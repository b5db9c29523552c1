"""Targeted phantom-class experiments on background regions."""
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from attacks.losses import AttackConfig
from attacks.pgd import PGD, PerturbationBudget, attack_objective
from defense.masks import background_mask
from errors import PreconditionError
from logger import get_logger
from prediction.predictor_model import Detector, decode_tensors
from schema.dataset_schema import GroundTruth

logger = get_logger(task_name="targeted_experiment")


def confident_cells(
    detector: Detector,
    images: np.ndarray,
    conf_threshold: float,
    class_id: Optional[int] = None,
    regions: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    (N, A) bool: cells passing the confidence filter, optionally restricted to a
    predicted class and to candidates centered on non-zero region pixels.
    """
    with torch.no_grad():
        decoded = decode_tensors(detector.forward(images))
    passing = (decoded.scores > conf_threshold).cpu().numpy()
    if class_id is not None:
        passing &= decoded.class_probs.argmax(dim=-1).cpu().numpy() == class_id
    if regions is not None:
        regions = np.asarray(regions)
        height, width = regions.shape[-2:]
        centers = decoded.boxes[..., :2].cpu().numpy()
        cols = np.clip(np.floor(centers[..., 0]).astype(np.int64), 0, width - 1)
        rows = np.clip(np.floor(centers[..., 1]).astype(np.int64), 0, height - 1)
        batch = np.arange(regions.shape[0])[:, None]
        passing &= regions[batch, rows, cols] > 0
    return passing


def targeted_semantics_experiment(
    detector: Detector,
    images: np.ndarray,
    classes: Sequence[int],
    budget: Optional[PerturbationBudget],
    gts: Optional[Sequence[GroundTruth]] = None,
    conf_threshold: float = 0.25,
    seed: int = 0,
    base_cfg: Optional[AttackConfig] = None,
) -> pd.DataFrame:
    """
    Run a targeted attack per (image, target class) and count the phantoms of
    that class it creates in the background.

    A phantom is a cell that passes the confidence filter with the target
    class as its argmax and its center in the background after the attack
    but not before. Without ground truth the whole image is background.
    `budget=None` is the zero-step attack.

    Returns:
        pd.DataFrame: one row per (image, target_class) with the phantom count
            and the clean / attacked counts of target-class candidates.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    n_images, height, width = images.shape[0], images.shape[1], images.shape[2]
    for class_id in classes:
        if not 0 <= class_id < detector.arch.num_classes:
            raise PreconditionError(
                f"Target class {class_id} is not one of the detector's "
                f"{detector.arch.num_classes} classes"
            )
    if gts is None:
        regions = np.ones((n_images, height, width), dtype=np.float32)
    else:
        regions = np.stack([background_mask(gt, height, width) for gt in gts])

    base_cfg = base_cfg or AttackConfig(family="targeted", target_class=0)
    rows: List[dict] = []
    for class_id in classes:
        cfg = replace(
            base_cfg,
            family="targeted",
            target_class=int(class_id),
            region_mask=regions,
            conf_threshold=conf_threshold,
        )
        if budget is None:
            adversarial = images
        else:
            attacker = PGD(
                detector,
                budget,
                attack_objective(cfg),
                conf_threshold=conf_threshold,
                seed=seed,
            )
            adversarial = attacker.attack(images).adversarial
        clean = confident_cells(detector, images, conf_threshold, class_id, regions)
        attacked = confident_cells(detector, adversarial, conf_threshold, class_id, regions)
        phantoms = (attacked & ~clean).sum(axis=1)
        for index in range(n_images):
            rows.append(
                {
                    "image": index,
                    "target_class": int(class_id),
                    "class_name": detector.class_names[class_id],
                    "phantom_count": int(phantoms[index]),
                    "clean_target_count": int(clean[index].sum()),
                    "attacked_target_count": int(attacked[index].sum()),
                }
            )
        logger.info(
            f"Target class {detector.class_names[class_id]}: "
            f"{int(phantoms.sum())} background phantoms over {n_images} images"
        )
    return pd.DataFrame(rows)
