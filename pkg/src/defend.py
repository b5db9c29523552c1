import os
from typing import Dict, List, Optional

import pandas as pd

from capacity import compute_capacity
from config import paths
from defense.training import UnderloadResult, underload_train
from errors import CapacityUnreachable
from logger import get_logger, log_error
from prediction.predictor_model import (
    Detector,
    build_detector,
    load_predictor_model,
    save_predictor_model,
)
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import SceneDataset, read_dataset
from utils import ResourceTracker, save_dataframe_as_csv, save_json, set_seeds

logger = get_logger(task_name="defend")

SCHEDULE_COLUMNS = ["stage", "ratio", "attacked_count_mean", "clean_map50", "accepted"]


def initial_parameters(
    run_config: RunConfig, train_data: SceneDataset, checkpoint_path: str
) -> Detector:
    """The parameters every stage restarts from: the standard checkpoint or a fresh init."""
    if run_config.resolved["defense"]["init_from"] == "standard":
        logger.info(f"Stages restart from the standard checkpoint {checkpoint_path}")
        return load_predictor_model(checkpoint_path)
    logger.info("Stages restart from a fresh initialization")
    return build_detector(
        run_config.resolved["hyperparameters"],
        train_data.schema.height,
        train_data.schema.width,
        train_data.schema.class_names,
        run_config.seed,
    )


def save_schedule_log(schedule_log: List[Dict], fingerprint: str, file_path: str) -> None:
    frame = pd.DataFrame(schedule_log, columns=SCHEDULE_COLUMNS)
    frame["fingerprint"] = fingerprint
    save_dataframe_as_csv(frame, file_path)


def run_defend(
    run_config: Optional[RunConfig] = None,
    fps: Optional[float] = None,
    t_budget_ms: Optional[float] = None,
    train_file_path: str = paths.TRAIN_DATASET_FILE_PATH,
    test_file_path: str = paths.TEST_DATASET_FILE_PATH,
    standard_checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    defended_checkpoint_path: str = paths.DEFENDED_CHECKPOINT_PATH,
    latency_model_file_path: str = paths.LATENCY_MODEL_FILE_PATH,
    schedule_log_file_path: str = paths.SCHEDULE_LOG_FILE_PATH,
) -> UnderloadResult:
    """
    Capacity bound, then background-attentive adversarial training until the
    attacked candidate count fits under it.

    The stopping rule is evaluated on the first `defense.validation_images`
    test scenes. The schedule log is written even when the schedule runs out,
    in which case CapacityUnreachable is re-raised.

    Returns:
        UnderloadResult: accepted detector, ratio and schedule log.
    """
    try:
        with ResourceTracker(logger=logger, monitoring_interval=5):
            run_config = run_config or resolve_run_config("defend")
            set_seeds(seed_value=run_config.seed)

            logger.info("Computing capacity bound...")
            capacity_record = compute_capacity(
                run_config, fps, t_budget_ms, latency_model_file_path
            )
            c_max = capacity_record["c_max"]

            logger.info("Loading data...")
            train_data = read_dataset(train_file_path)
            test_data = read_dataset(test_file_path)
            n_validation = min(
                run_config.resolved["defense"]["validation_images"], len(test_data)
            )
            validation = test_data.subset(range(n_validation))

            params0 = initial_parameters(run_config, train_data, standard_checkpoint_path)

            logger.info(f"Starting adversarial training against C_max = {c_max}...")
            try:
                result = underload_train(
                    params0, train_data, run_config.at_config(), c_max, validation
                )
            except CapacityUnreachable as exc:
                save_schedule_log(
                    exc.schedule_log, run_config.fingerprint, schedule_log_file_path
                )
                raise

        logger.info(f"Accepted mask ratio {result.accepted_ratio}")
        logger.info("Saving defended detector...")
        save_schedule_log(result.schedule_log, run_config.fingerprint, schedule_log_file_path)
        save_predictor_model(
            result.detector,
            defended_checkpoint_path,
            extra_header={
                "kind": "defended",
                "accepted_ratio": result.accepted_ratio,
                "c_max": c_max,
                "fingerprint": run_config.fingerprint,
            },
        )
        save_json(
            os.path.join(os.path.dirname(schedule_log_file_path), "capacity.json"),
            capacity_record,
        )
        run_config.save(os.path.dirname(schedule_log_file_path))
        return result

    except Exception as exc:
        err_msg = "Error occurred during adversarial training."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("defend"))
        raise


if __name__ == "__main__":
    run_defend()
