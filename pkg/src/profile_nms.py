import os
from typing import Optional

import pandas as pd

from config import paths
from logger import get_logger, log_error
from nms.benchmark import microbenchmark, samples_to_dataframe
from run_config import RunConfig, resolve_run_config
from utils import save_dataframe_as_csv

logger = get_logger(task_name="profile-nms")


def run_profile_nms(
    run_config: Optional[RunConfig] = None,
    benchmark_file_path: str = paths.BENCHMARK_FILE_PATH,
) -> pd.DataFrame:
    """
    Time greedy NMS over synthetic workloads of increasing |C|.

    Runs without the resource tracker: its sampling thread would share the
    interpreter with the timed loop.

    Returns:
        pd.DataFrame: one row per size (size, median_ns, iou_ops,
            transfer_ops, while_iterations, per-phase times).
    """
    try:
        run_config = run_config or resolve_run_config("profile-nms")
        bench = run_config.resolved["benchmark"]
        spec = run_config.workload_spec()
        logger.info(
            f"Profiling NMS on '{spec.kind}' workloads, sizes {bench['sizes']}, "
            f"{bench['repeats']} repeats..."
        )
        samples = microbenchmark(
            spec,
            bench["sizes"],
            bench["repeats"],
            iou_threshold=run_config.nms_config().iou_threshold,
            warmup_runs=bench["warmup_runs"],
            memory_guard=bench["memory_guard"],
        )
        frame = samples_to_dataframe(samples)
        frame["fingerprint"] = run_config.fingerprint
        for sample in samples:
            logger.info(f"|C| = {sample.size}: median {sample.median_ns / 1e6:.3f} ms")

        logger.info("Saving benchmark...")
        save_dataframe_as_csv(frame, benchmark_file_path)
        run_config.save(os.path.dirname(benchmark_file_path))
        return frame

    except Exception as exc:
        err_msg = "Error occurred during NMS profiling."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("profile-nms"))
        raise


if __name__ == "__main__":
    run_profile_nms()
