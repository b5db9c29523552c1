from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from attacks.losses import AttackConfig
from attacks.pgd import PerturbationBudget, attack_dataset
from data_models.report_model import validate_eval_report
from evaluation.metrics import map50
from latency.model import NS_PER_S, TwoTermModel, predict_time
from logger import get_logger
from nms.engine import NmsConfig
from prediction.predictor_model import Detector
from schema.dataset_schema import SceneDataset

logger = get_logger(task_name="evaluation")

CLEAN = "clean"


@dataclass(frozen=True)
class LatencyEstimate:
    mean_count: float
    t_nms: float
    t_backbone: float
    fps: float

    @property
    def t_frame(self) -> float:
        return self.t_backbone + self.t_nms


def latency_report(counts: Sequence[float], model: TwoTermModel) -> LatencyEstimate:
    """Predicted NMS time and FPS at the mean candidate count."""
    counts = np.asarray(counts, dtype=np.float64)
    mean_count = float(counts.mean()) if counts.size else 0.0
    t_nms = predict_time(model, mean_count)
    return LatencyEstimate(
        mean_count=mean_count,
        t_nms=t_nms,
        t_backbone=model.t_backbone,
        fps=1.0 / (model.t_backbone + t_nms),
    )


def evaluate_condition(
    detector: Detector,
    dataset: SceneDataset,
    nms_cfg: NmsConfig,
    latency_model: TwoTermModel,
    model_label: str,
    fingerprint: str,
    attack: Optional[Tuple[AttackConfig, PerturbationBudget]] = None,
    seed: int = 0,
) -> Dict:
    """
    Evaluate one checkpoint on clean images or under one attack.

    Attacked accuracy is mAP50 of the attacked images against the clean ground
    truth, with the standard NMS re-run on the attacked outputs.

    Returns:
        dict: a validated evaluation report.
    """
    clean_counts = detector.candidate_counts(dataset.images, nms_cfg.conf_threshold)
    if attack is None:
        condition = CLEAN
        images = dataset.images
        attacked_counts = clean_counts
    else:
        attack_cfg, budget = attack
        run = attack_dataset(detector, dataset, attack_cfg, budget, nms_cfg, seed=seed)
        condition = run.summary()["family"]
        images = run.adversarial
        attacked_counts = run.attacked_counts

    detections = detector.predict(images, nms_cfg)
    result = map50(detections, dataset.ground_truths, dataset.schema.num_classes)
    latency = latency_report(attacked_counts, latency_model)
    t_backbone_ns = int(round(latency.t_backbone * NS_PER_S))
    t_nms_ns = int(round(latency.t_nms * NS_PER_S))
    names = dataset.schema.class_names
    report = {
        "model": model_label,
        "condition": condition,
        "ap50": result.ap_by_class(names),
        "map50": result.map50,
        "pr_curves": {
            names[k]: {"recall": v.recall.tolist(), "precision": v.precision.tolist()}
            for k, v in result.per_class.items()
        },
        "n_images": len(dataset),
        "mean_clean_count": float(np.mean(clean_counts)) if len(dataset) else 0.0,
        "mean_attacked_count": latency.mean_count,
        "predicted_nms_ns": t_nms_ns,
        "t_backbone_ns": t_backbone_ns,
        "predicted_fps": 1e9 / (t_backbone_ns + t_nms_ns),
        "fingerprint": fingerprint,
    }
    logger.info(
        f"{model_label} / {condition}: mAP50 {result.map50:.3f}, "
        f"mean count {latency.mean_count:.1f}, predicted FPS {report['predicted_fps']:.1f}"
    )
    return validate_eval_report(report)


def pr_curves_frame(reports: List[Dict]) -> pd.DataFrame:
    """PR curves of every report as (model, condition, class, recall, precision) rows."""
    rows = []
    for report in reports:
        for name, curve in report["pr_curves"].items():
            for recall, precision in zip(curve["recall"], curve["precision"]):
                rows.append(
                    {
                        "model": report["model"],
                        "condition": report["condition"],
                        "class": name,
                        "recall": recall,
                        "precision": precision,
                    }
                )
    return pd.DataFrame(rows, columns=["model", "condition", "class", "recall", "precision"])


def summary_table(reports: List[Dict]) -> pd.DataFrame:
    """One row per model: mAP50, mean attacked count and predicted FPS per condition."""
    frame = pd.DataFrame(
        [
            {
                "model": r["model"],
                "condition": r["condition"],
                "map50": r["map50"],
                "mean_count": r["mean_attacked_count"],
                "predicted_fps": r["predicted_fps"],
            }
            for r in reports
        ]
    )
    if frame.empty:
        return frame
    table = frame.pivot(index="model", columns="condition")
    table.columns = [f"{condition}_{metric}" for metric, condition in table.columns]
    return table.reset_index()
