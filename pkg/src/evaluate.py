import os
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import pandas as pd

from config import paths
from evaluation.report import evaluate_condition, pr_curves_frame, summary_table
from latency.model import load_latency_model
from logger import get_logger, log_error
from prediction.predictor_model import load_predictor_model
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import read_dataset
from utils import ResourceTracker, save_dataframe_as_csv, save_json, set_seeds

logger = get_logger(task_name="eval")

EVAL_FAMILIES = ("overload", "phantom", "daedalus")


def evaluate_checkpoints(
    run_config: RunConfig,
    checkpoints: Dict[str, str],
    test_file_path: str,
    latency_model_file_path: str,
    families: Sequence[str] = EVAL_FAMILIES,
) -> List[Dict]:
    """
    Evaluation reports for every (checkpoint, condition) pair: clean first,
    then each attack family at the configured attack budget.
    """
    latency_model = load_latency_model(latency_model_file_path).two_term
    test_data = read_dataset(test_file_path)
    n_images = min(run_config.resolved["attack"]["n_images"], len(test_data))
    test_data = test_data.subset(range(n_images))
    nms_cfg = run_config.nms_config()
    budget = run_config.attack_budget()
    base_cfg = run_config.attack_config()

    reports = []
    for label, checkpoint_path in checkpoints.items():
        logger.info(f"Evaluating {label} detector...")
        detector = load_predictor_model(checkpoint_path)
        conditions = [None] + [(replace(base_cfg, family=f), budget) for f in families]
        for attack in conditions:
            reports.append(
                evaluate_condition(
                    detector,
                    test_data,
                    nms_cfg,
                    latency_model,
                    model_label=label,
                    fingerprint=run_config.fingerprint,
                    attack=attack,
                    seed=run_config.seed,
                )
            )
    return reports


def run_evaluation(
    run_config: Optional[RunConfig] = None,
    standard_checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    defended_checkpoint_path: str = paths.DEFENDED_CHECKPOINT_PATH,
    test_file_path: str = paths.TEST_DATASET_FILE_PATH,
    latency_model_file_path: str = paths.LATENCY_MODEL_FILE_PATH,
    output_dir: str = paths.EVALUATION_DIR,
) -> pd.DataFrame:
    """
    Table-shaped evaluation of the standard and (when present) defended
    detectors: clean and attacked mAP50, mean candidate counts and predicted
    FPS per condition.

    Returns:
        pd.DataFrame: the summary table, one row per detector.
    """
    try:
        with ResourceTracker(logger=logger, monitoring_interval=5):
            run_config = run_config or resolve_run_config("eval")
            set_seeds(seed_value=run_config.seed)

            checkpoints = {"standard": standard_checkpoint_path}
            if os.path.isfile(defended_checkpoint_path):
                checkpoints["defended"] = defended_checkpoint_path
            else:
                logger.warning(
                    f"No defended checkpoint at {defended_checkpoint_path}; "
                    "evaluating the standard detector only."
                )
            reports = evaluate_checkpoints(
                run_config, checkpoints, test_file_path, latency_model_file_path
            )
            table = summary_table(reports)

        logger.info("Saving evaluation reports...")
        save_json(os.path.join(output_dir, "eval_reports.json"), reports)
        save_dataframe_as_csv(pr_curves_frame(reports), os.path.join(output_dir, "pr_curves.csv"))
        save_dataframe_as_csv(
            table.assign(fingerprint=run_config.fingerprint),
            os.path.join(output_dir, "summary.csv"),
        )
        run_config.save(output_dir)
        logger.info(f"Summary:\n{table.to_string(index=False)}")
        return table

    except Exception as exc:
        err_msg = "Error occurred during evaluation."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("eval"))
        raise


if __name__ == "__main__":
    run_evaluation()
