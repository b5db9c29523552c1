import os
from typing import Dict, Optional

import numpy as np
import pandas as pd

from attacks.experiments import targeted_semantics_experiment
from attacks.losses import family_label
from attacks.pgd import attack_dataset
from config import paths
from logger import get_logger, log_error
from prediction.predictor_model import Detector, load_predictor_model
from preprocessing.scenes import populated_scene
from run_config import RunConfig, resolve_run_config
from schema.dataset_schema import (
    DatasetSchema,
    SceneDataset,
    build_header,
    read_dataset,
    write_dataset,
)
from utils import ResourceTracker, save_dataframe_as_csv, save_json, set_seeds

logger = get_logger(task_name="attack")

ATTACK_FORMAT_VERSION = 1
POPULATED_OBJECTS = 16


def semantics_scenes(run_config: RunConfig) -> Dict[str, np.ndarray]:
    """A blank image and one image crowded with each class."""
    height, width = run_config.height, run_config.width
    noise = run_config.resolved["model"]["dataset"]["noise_level"]
    scenes = {"blank": np.zeros((1, height, width, 3), dtype=np.float32)}
    for class_id, name in enumerate(run_config.class_names):
        image, _ = populated_scene(
            run_config.seed, height, width, class_id, POPULATED_OBJECTS, noise_level=noise
        )
        scenes[f"populated_{name}"] = image[None]
    return scenes


def run_semantics_experiment(
    detector: Detector, dataset: SceneDataset, run_config: RunConfig
) -> pd.DataFrame:
    """Targeted phantom counts per class on test scenes, a blank image and crowded scenes."""
    classes = list(range(len(run_config.class_names)))
    budget = run_config.attack_budget()
    base_cfg = run_config.attack_config()
    conf_threshold = run_config.nms_config().conf_threshold
    frames = [
        targeted_semantics_experiment(
            detector,
            dataset.images,
            classes,
            budget,
            gts=dataset.ground_truths,
            conf_threshold=conf_threshold,
            seed=run_config.seed,
            base_cfg=base_cfg,
        ).assign(scene="test")
    ]
    for scene, image in semantics_scenes(run_config).items():
        frame = targeted_semantics_experiment(
            detector,
            image,
            classes,
            budget,
            conf_threshold=conf_threshold,
            seed=run_config.seed,
            base_cfg=base_cfg,
        )
        frames.append(frame.assign(scene=scene))
    return pd.concat(frames, ignore_index=True)


def run_attack(
    run_config: Optional[RunConfig] = None,
    checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    test_file_path: str = paths.TEST_DATASET_FILE_PATH,
    output_dir: str = paths.ATTACKS_DIR,
    semantics: bool = False,
) -> Dict:
    """
    Attack the first `attack.n_images` test scenes with the configured family.

    Writes a JSON run record (summary and per-image records), the attacked
    images as a dataset file and, with `semantics`, the targeted phantom-class
    counts as CSV.

    Returns:
        dict: the run summary.
    """
    try:
        with ResourceTracker(logger=logger, monitoring_interval=5):
            run_config = run_config or resolve_run_config("attack")
            set_seeds(seed_value=run_config.seed)

            logger.info("Loading detector...")
            detector = load_predictor_model(checkpoint_path)

            logger.info("Loading test data...")
            test_data = read_dataset(test_file_path)
            n_images = min(run_config.resolved["attack"]["n_images"], len(test_data))
            test_data = test_data.subset(range(n_images))

            cfg = run_config.attack_config()
            budget = run_config.attack_budget()
            logger.info(
                f"Running {family_label(cfg.family)} attack on {n_images} images "
                f"({budget.norm}, epsilon {budget.epsilon:.4g}, {budget.steps} steps)..."
            )
            run = attack_dataset(
                detector,
                test_data,
                cfg,
                budget,
                run_config.nms_config(),
                seed=run_config.seed,
            )
            summary = run.summary()
            logger.info(
                f"Mean candidate count {summary['mean_clean_count']:.1f} -> "
                f"{summary['mean_attacked_count']:.1f}; "
                f"{summary['share_at_least_10x']:.0%} of images at least 10x"
            )

            semantics_frame = None
            if semantics:
                logger.info("Running targeted semantics experiment...")
                semantics_frame = run_semantics_experiment(detector, test_data, run_config)

        label = family_label(cfg.family)
        logger.info("Saving attack outputs...")
        save_json(
            os.path.join(output_dir, f"{label}_run.json"),
            {
                "format_version": ATTACK_FORMAT_VERSION,
                "fingerprint": run_config.fingerprint,
                "summary": summary,
                "records": run.records,
            },
        )
        header = build_header(
            test_data.schema.height,
            test_data.schema.width,
            test_data.schema.class_names,
            len(test_data),
            test_data.schema.generator_seed,
            run_config.fingerprint,
        )
        write_dataset(
            SceneDataset(
                schema=DatasetSchema(header),
                images=run.adversarial,
                ground_truths=test_data.ground_truths,
            ),
            os.path.join(output_dir, f"{label}_adversarial.nmsds"),
        )
        if semantics_frame is not None:
            semantics_frame["fingerprint"] = run_config.fingerprint
            save_dataframe_as_csv(
                semantics_frame, os.path.join(output_dir, "targeted_semantics.csv")
            )
        run_config.save(output_dir)
        return summary

    except Exception as exc:
        err_msg = "Error occurred during the attack."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("attack"))
        raise


if __name__ == "__main__":
    run_attack()
