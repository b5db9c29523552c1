from typing import Dict, List

from pydantic import BaseModel, ValidationError, root_validator, validator

REPORT_FORMAT_VERSION = 1


class PrCurve(BaseModel):
    recall: List[float]
    precision: List[float]

    @root_validator(allow_reuse=True)
    def same_length(cls, values):
        if len(values.get("recall", [])) != len(values.get("precision", [])):
            raise ValueError("recall and precision must have the same length")
        return values


class EvalReport(BaseModel):
    """
    Detection quality and simulated latency of one checkpoint under one
    condition (clean or a named attack).
    """

    format_version: int = REPORT_FORMAT_VERSION
    model: str
    condition: str
    ap50: Dict[str, float]
    map50: float
    pr_curves: Dict[str, PrCurve] = {}
    n_images: int
    mean_clean_count: float
    mean_attacked_count: float
    predicted_nms_ns: int
    t_backbone_ns: int
    predicted_fps: float
    fingerprint: str

    @validator("ap50", allow_reuse=True)
    def ap_in_unit_interval(cls, v):
        for name, value in v.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"AP50 of class '{name}' must be in [0, 1]. Given {value}")
        return v

    @validator("map50", allow_reuse=True)
    def map_in_unit_interval(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"mAP50 must be in [0, 1]. Given {v}")
        return v

    @validator("t_backbone_ns", allow_reuse=True)
    def positive_backbone(cls, v):
        if v <= 0:
            raise ValueError(f"t_backbone_ns must be positive. Given {v}")
        return v

    @root_validator(skip_on_failure=True, allow_reuse=True)
    def fps_matches_latency(cls, values):
        frame_ns = values["t_backbone_ns"] + values["predicted_nms_ns"]
        expected = 1e9 / frame_ns
        if abs(values["predicted_fps"] - expected) > 1e-6 * expected + 1e-3:
            raise ValueError(
                f"predicted_fps {values['predicted_fps']} does not match "
                f"1 / (T_backbone + T_nms) = {expected}"
            )
        return values


def validate_eval_report(report: dict) -> dict:
    """
    Validate an evaluation report dictionary.

    Raises:
        ValueError: if the report is invalid
    """
    try:
        return EvalReport.parse_obj(report).dict()
    except ValidationError as exc:
        raise ValueError(f"Invalid evaluation report: {exc}") from exc
