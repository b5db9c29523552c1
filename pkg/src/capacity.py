import os
from typing import Dict, Optional

from config import paths
from latency.model import capacity, fps_to_budget, load_latency_model
from logger import get_logger, log_error
from run_config import RunConfig, resolve_run_config
from utils import save_json

logger = get_logger(task_name="capacity")


def compute_capacity(
    run_config: RunConfig,
    fps: Optional[float] = None,
    t_budget_ms: Optional[float] = None,
    latency_model_file_path: str = paths.LATENCY_MODEL_FILE_PATH,
) -> Dict:
    """
    C_max for a frame-time budget.

    The budget is `t_budget_ms` when given, else 1 / fps, with fps defaulting
    to the defense config's target rate.

    Raises:
        BudgetInfeasible: if the budget does not exceed T_backbone.
    """
    model = load_latency_model(latency_model_file_path)
    if t_budget_ms is not None:
        t_budget = t_budget_ms / 1e3
    else:
        t_budget = fps_to_budget(fps or run_config.resolved["defense"]["fps"])
    report = capacity(model.two_term, t_budget)
    logger.info(
        f"T_budget = {t_budget * 1e3:.2f} ms, NMS budget = "
        f"{report.nms_budget * 1e3:.3f} ms -> C_max = {report.c_max}"
    )
    return dict(report.as_dict(), fingerprint=run_config.fingerprint)


def run_capacity(
    run_config: Optional[RunConfig] = None,
    fps: Optional[float] = None,
    t_budget_ms: Optional[float] = None,
    latency_model_file_path: str = paths.LATENCY_MODEL_FILE_PATH,
    capacity_file_path: str = paths.CAPACITY_FILE_PATH,
) -> Dict:
    """Compute and save the capacity bound (see compute_capacity)."""
    try:
        run_config = run_config or resolve_run_config("capacity")
        logger.info("Computing capacity bound...")
        record = compute_capacity(run_config, fps, t_budget_ms, latency_model_file_path)
        save_json(capacity_file_path, record)
        run_config.save(os.path.dirname(capacity_file_path))
        return record

    except Exception as exc:
        err_msg = "Error occurred during capacity computation."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(message=err_msg, error=exc, error_fpath=paths.error_file_path("capacity"))
        raise


if __name__ == "__main__":
    run_capacity()
