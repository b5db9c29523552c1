from typing import Dict, Optional

from config import paths
from logger import get_logger, log_error
from preprocessing.scenes import generate_scenes
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import write_dataset

logger = get_logger(task_name="gen-data")

TRAIN_STREAM = 0
TEST_STREAM = 1


def run_gen_data(
    run_config: Optional[RunConfig] = None,
    train_file_path: str = paths.TRAIN_DATASET_FILE_PATH,
    test_file_path: str = paths.TEST_DATASET_FILE_PATH,
) -> Dict[str, str]:
    """
    Generate the synthetic train and test scene datasets.

    Both splits come from the run seed; the test split uses its own stream so
    its images never coincide with training images.

    Args:
        run_config (RunConfig, optional): resolved configuration; the defaults
            are used when omitted.
        train_file_path (str, optional): where to write the training split.
        test_file_path (str, optional): where to write the test split.

    Returns:
        dict: split name -> written file path.
    """
    try:
        run_config = run_config or resolve_run_config("gen-data")
        spec = run_config.resolved["model"]["dataset"]
        written = {}
        for split, stream, n_images, file_path in (
            ("train", TRAIN_STREAM, spec["n_train"], train_file_path),
            ("test", TEST_STREAM, spec["n_test"], test_file_path),
        ):
            logger.info(f"Generating {n_images} {split} scenes...")
            dataset = generate_scenes(
                seed=run_config.seed,
                n_images=n_images,
                height=run_config.height,
                width=run_config.width,
                class_names=run_config.class_names,
                min_objects=spec["min_objects"],
                max_objects=spec["max_objects"],
                min_box_size=spec["min_box_size"],
                max_box_size=spec["max_box_size"],
                noise_level=spec["noise_level"],
                stream=stream,
                fingerprint=run_config.fingerprint,
            )
            try:
                write_dataset(dataset, file_path)
            except OSError as exc:
                raise OSError(f"Could not write dataset to '{file_path}': {exc}") from exc
            logger.info(f"Saved {split} dataset to {file_path}")
            written[split] = file_path
        return written

    except Exception as exc:
        err_msg = "Error occurred during data generation."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("gen-data"))
        raise


if __name__ == "__main__":
    run_gen_data()
