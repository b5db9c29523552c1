import os
from typing import Dict, Optional

import numpy as np
import pandas as pd

from analysis.properties import (
    REGION_KINDS,
    boundary_margin,
    loss_correlation,
    monotonicity_sweep,
    phantom_stats,
)
from attacks.pgd import attack_dataset
from config import paths
from logger import get_logger, log_error
from prediction.predictor_model import Detector, load_predictor_model
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import SceneDataset, read_dataset
from utils import ResourceTracker, save_dataframe_as_csv, save_json, set_seeds

logger = get_logger(task_name="analyze")

ANALYSIS_FORMAT_VERSION = 1


def correlation_analysis(
    detector: Detector, data: SceneDataset, run_config: RunConfig
) -> pd.DataFrame:
    settings = run_config.resolved["analysis"]["correlation"]
    frames = []
    for loss_a, loss_b in settings["pairs"]:
        logger.info(f"Loss correlation {loss_a}/{loss_b}...")
        trace = loss_correlation(
            detector,
            data.images,
            loss_a,
            loss_b,
            settings["steps"],
            run_config.attack_budget(),
            gts=data.ground_truths,
            attack_cfg=run_config.attack_config(),
            seed=run_config.seed,
        )
        frames.append(trace.to_dataframe())
    return pd.concat(frames, ignore_index=True)


def margin_analysis(
    detector: Detector, data: SceneDataset, run_config: RunConfig
) -> pd.DataFrame:
    """Directional margins of both region kinds for every image."""
    settings = run_config.resolved["analysis"]["margin"]
    rows = []
    for index, (image, gt) in enumerate(zip(data.images, data.ground_truths)):
        for region in REGION_KINDS:
            estimate = boundary_margin(
                detector,
                image,
                region,
                settings["score_threshold"],
                gt=gt,
                t_max=settings["t_max"],
                scan_step=settings["scan_step"],
                tolerance=settings["tolerance"],
                norm=settings["norm"],
                exclude_clean_hits=True,
            )
            rows.append(dict(estimate.as_dict(), image=index))
    return pd.DataFrame(rows)


def margin_summary(margins: pd.DataFrame) -> Dict:
    summary = {}
    for region in REGION_KINDS:
        crossed = margins[(margins["region"] == region) & margins["crossed"]]
        summary[region] = {
            "mean_margin": float(crossed["margin"].mean()) if len(crossed) else None,
            "crossed": int(len(crossed)),
            "n_images": int((margins["region"] == region).sum()),
        }
    return summary


def run_analysis(
    run_config: Optional[RunConfig] = None,
    checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    test_file_path: str = paths.TEST_DATASET_FILE_PATH,
    output_dir: str = paths.ANALYSIS_DIR,
) -> Dict:
    """
    Run the four analyses on the first `analysis.n_images` test scenes: loss
    correlation, background vs object margins, phantom locations under the
    configured attack and the mask-ratio sweep.

    Returns:
        dict: the JSON summary written next to the per-analysis CSVs.
    """
    try:
        with ResourceTracker(logger=logger, monitoring_interval=5):
            run_config = run_config or resolve_run_config("analyze")
            set_seeds(seed_value=run_config.seed)
            settings = run_config.resolved["analysis"]

            logger.info("Loading detector and test data...")
            detector = load_predictor_model(checkpoint_path)
            test_data = read_dataset(test_file_path)
            n_images = min(settings["n_images"], len(test_data))
            data = test_data.subset(range(n_images))

            correlations = correlation_analysis(detector, data, run_config)

            logger.info("Estimating boundary margins...")
            margins = margin_analysis(detector, data, run_config)

            logger.info("Collecting phantom statistics...")
            nms_cfg = run_config.nms_config()
            run = attack_dataset(
                detector,
                data,
                run_config.attack_config(),
                run_config.attack_budget(),
                nms_cfg,
                seed=run_config.seed,
            )
            phantoms = phantom_stats(
                detector,
                data.images,
                run.adversarial,
                data.ground_truths,
                nms_cfg,
                deltas=run.delta,
                iou_threshold=settings["phantom_iou_threshold"],
            )

            logger.info("Running mask-ratio sweep...")
            sweep = monotonicity_sweep(
                detector,
                data.images,
                data.ground_truths,
                settings["ratios"],
                run_config.attack_budget(),
                attack_cfg=run_config.attack_config(),
                seed=run_config.seed,
            )

        steps = correlations.groupby(["pair", "step"])[["cosine", "pearson"]].median()
        summary = {
            "format_version": ANALYSIS_FORMAT_VERSION,
            "fingerprint": run_config.fingerprint,
            "n_images": n_images,
            "median_correlation": {
                pair: {
                    "cosine": frame["cosine"].tolist(),
                    "pearson": frame["pearson"].tolist(),
                }
                for pair, frame in steps.reset_index().groupby("pair")
            },
            "margins": margin_summary(margins),
            "phantoms": phantoms.summary(),
            "sweep": {
                "clean_count": sweep.clean_count,
                "spearman": None if np.isnan(sweep.spearman) else sweep.spearman,
            },
        }
        logger.info(
            f"Margins: {summary['margins']}; phantoms: {summary['phantoms']}; "
            f"sweep Spearman {sweep.spearman:.3f}"
        )

        logger.info("Saving analysis outputs...")
        fingerprint = run_config.fingerprint
        for name, frame in (
            ("loss_correlation", correlations),
            ("margins", margins),
            ("phantoms", phantoms.per_image),
            ("mask_sweep", sweep.table),
        ):
            save_dataframe_as_csv(
                frame.assign(fingerprint=fingerprint), os.path.join(output_dir, f"{name}.csv")
            )
        save_json(os.path.join(output_dir, "analysis_summary.json"), summary)
        run_config.save(output_dir)
        return summary

    except Exception as exc:
        err_msg = "Error occurred during analysis."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("analyze"))
        raise


if __name__ == "__main__":
    run_analysis()
