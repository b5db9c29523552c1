import os
from typing import Dict, Optional

import pandas as pd

from config import paths
from errors import FitDegenerate
from latency.model import (
    LATENCY_FORMAT_VERSION,
    NS_PER_S,
    LatencyModel,
    calibrate,
    fit_piecewise,
    samples_from_benchmark,
)
from logger import get_logger, log_error
from nms.benchmark import dataframe_to_traces
from prediction.predictor_model import build_detector, load_predictor_model
from run_config import RunConfig, resolve_run_config
from utils import save_json

logger = get_logger(task_name="fit-latency")


def measure_backbone_time(
    run_config: RunConfig,
    checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
) -> float:
    """
    Median detector forward time in seconds. Uses the standard checkpoint when
    it exists; the forward cost does not depend on the weights otherwise.
    """
    if os.path.isfile(checkpoint_path):
        detector = load_predictor_model(checkpoint_path)
    else:
        logger.info("No checkpoint found; timing a freshly initialized detector.")
        detector = build_detector(
            run_config.resolved["hyperparameters"],
            run_config.height,
            run_config.width,
            run_config.class_names,
            run_config.seed,
        )
    repeats = run_config.resolved["benchmark"]["backbone_repeats"]
    return detector.time_forward(repeats=repeats)


def run_fit_latency(
    run_config: Optional[RunConfig] = None,
    t_backbone_ms: Optional[float] = None,
    benchmark_file_path: str = paths.BENCHMARK_FILE_PATH,
    checkpoint_path: str = paths.STANDARD_CHECKPOINT_PATH,
    latency_model_file_path: str = paths.LATENCY_MODEL_FILE_PATH,
) -> Dict:
    """
    Fit both latency models to a profile-nms benchmark.

    The piecewise (flat then quadratic) fit is reported when it identifies
    both regimes; a degenerate fit is logged and left out of the record. The
    two-term model is always calibrated and is what capacity planning uses.

    Args:
        run_config (RunConfig, optional): resolved configuration.
        t_backbone_ms (float, optional): backbone time to use instead of
            measuring the detector forward pass.
        benchmark_file_path (str, optional): profile-nms CSV.
        checkpoint_path (str, optional): checkpoint timed for T_backbone.
        latency_model_file_path (str, optional): where to write the model JSON.

    Returns:
        dict: the saved latency model record.
    """
    try:
        run_config = run_config or resolve_run_config("fit-latency")
        logger.info("Loading benchmark...")
        if not os.path.isfile(benchmark_file_path):
            raise FileNotFoundError(
                f"Benchmark CSV not found: '{benchmark_file_path}'. Run profile-nms first."
            )
        frame = pd.read_csv(benchmark_file_path)
        traces = dataframe_to_traces(frame)

        if t_backbone_ms is None:
            logger.info("Timing the detector forward pass...")
            t_backbone = measure_backbone_time(run_config, checkpoint_path)
        else:
            t_backbone = t_backbone_ms / 1e3
        logger.info(f"T_backbone = {t_backbone * 1e3:.3f} ms")

        logger.info("Fitting piecewise model...")
        try:
            piecewise = fit_piecewise(
                samples_from_benchmark(list(zip(frame["size"], frame["median_ns"])))
            )
            logger.info(
                f"Flat regime up to N_t = {piecewise.n_t}, quadratic a = {piecewise.a:.3e}, "
                f"R^2 = {piecewise.r2:.3f}"
            )
        except FitDegenerate as exc:
            logger.warning(f"Piecewise fit degenerate ({exc.missing}): {exc}")
            piecewise = None

        logger.info("Calibrating two-term model...")
        two_term = calibrate(
            traces, t_backbone, total_times_ns=frame["median_ns"].tolist()
        )
        model = LatencyModel(piecewise=piecewise, two_term=two_term)
        record = dict(
            model.to_record(),
            format_version=LATENCY_FORMAT_VERSION,
            fingerprint=run_config.fingerprint,
        )
        logger.info(
            f"alpha = {two_term.alpha:.3e}, beta = {two_term.beta:.3e}, "
            f"S_IoU = {two_term.s_iou:.3e}/s, B = {two_term.b:.3e}/s, "
            f"T_backbone = {record['t_backbone_ns'] / NS_PER_S * 1e3:.3f} ms"
        )

        logger.info("Saving latency model...")
        save_json(latency_model_file_path, record)
        run_config.save(os.path.dirname(latency_model_file_path))
        return record

    except Exception as exc:
        err_msg = "Error occurred during latency model fitting."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("fit-latency"))
        raise


if __name__ == "__main__":
    run_fit_latency()
