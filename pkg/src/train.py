import os
from typing import Optional

import pandas as pd

from config import paths
from logger import get_logger, log_error
from prediction.predictor_model import (
    Detector,
    save_predictor_model,
    train_predictor_model,
)
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import read_dataset
from utils import ResourceTracker, save_dataframe_as_csv, set_seeds

logger = get_logger(task_name="train")


def run_training(
    run_config: Optional[RunConfig] = None,
    train_file_path: str = paths.TRAIN_DATASET_FILE_PATH,
    checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    history_file_path: str = paths.TRAIN_HISTORY_FILE_PATH,
) -> Detector:
    """
    Run the standard training of the detector and save its checkpoint.

    Args:
        run_config (RunConfig, optional): resolved configuration.
        train_file_path (str, optional): training dataset file.
        checkpoint_path (str, optional): where to save the checkpoint.
        history_file_path (str, optional): where to save the per-epoch loss.

    Returns:
        Detector: the trained detector.
    """
    try:
        with ResourceTracker(logger=logger, monitoring_interval=5):
            logger.info("Starting training...")
            run_config = run_config or resolve_run_config("train")

            # set seeds
            logger.info("Setting seeds...")
            set_seeds(seed_value=run_config.seed)

            # load train data
            logger.info("Loading train data...")
            train_data = read_dataset(train_file_path)
            logger.info(f"Loaded {len(train_data)} training scenes")

            # use default hyperparameters to train model
            logger.info("Training detector...")
            result = train_predictor_model(
                dataset=train_data,
                hyperparameters=run_config.resolved["hyperparameters"],
                seed=run_config.seed,
            )

        # save predictor model
        logger.info("Saving detector...")
        save_predictor_model(
            result.detector,
            checkpoint_path,
            extra_header={"kind": "standard", "fingerprint": run_config.fingerprint},
        )
        save_dataframe_as_csv(pd.DataFrame(result.history), history_file_path)
        run_config.save(os.path.dirname(checkpoint_path))
        return result.detector

    except Exception as exc:
        err_msg = "Error occurred during training."
        # Log the error
        logger.error(f"{err_msg} Error: {str(exc)}")
        # Log the error to the separate logging file
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("train"))
        # re-raise the error
        raise


if __name__ == "__main__":
    run_training()
