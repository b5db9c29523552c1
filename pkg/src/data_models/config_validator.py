from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ValidationError, root_validator, validator


class Norm(str, Enum):
    """Perturbation norms"""

    LINF = "linf"
    L2 = "l2"


class AttackFamily(str, Enum):
    OVERLOAD = "overload"
    PHANTOM = "phantom"
    DAEDALUS = "daedalus"
    TARGETED = "targeted"


class ConfidenceMode(str, Enum):
    OBJECTNESS_CLASS = "objectness_class"
    OBJECTNESS = "objectness"


class ScheduleDirection(str, Enum):
    DECREASE = "decrease"
    INCREASE = "increase"


class InitFrom(str, Enum):
    STANDARD = "standard"
    SCRATCH = "scratch"


class WorkloadKind(str, Enum):
    UNIFORM = "uniform"
    DENSE = "dense"
    DISJOINT_GRID = "disjoint_grid"


class Activation(str, Enum):
    SILU = "silu"
    RELU = "relu"
    TANH = "tanh"
    NONE = "none"


def _unit_interval(name: str, v: float) -> float:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must be in [0, 1]. Given {v}")
    return v


class NmsConfigModel(BaseModel):
    conf_threshold: float = 0.25
    iou_threshold: float = 0.6
    max_detections: Optional[int] = None
    class_aware: bool = False

    @validator("conf_threshold", "iou_threshold", allow_reuse=True)
    def threshold_in_unit_interval(cls, v, field):
        return _unit_interval(field.name, v)

    @validator("max_detections", allow_reuse=True)
    def non_negative_cap(cls, v):
        if v is not None and v < 0:
            raise ValueError(f"max_detections must be non-negative. Given {v}")
        return v


class DatasetSpecModel(BaseModel):
    """Synthetic scene generation settings."""

    n_train: int
    n_test: int
    min_objects: int = 1
    max_objects: int = 5
    min_box_size: int = 6
    max_box_size: int = 20
    noise_level: float = 0.15

    @validator("n_train", "n_test", allow_reuse=True)
    def at_least_one_image(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be at least 1. Given {v}")
        return v

    @validator("min_objects", "max_objects", "min_box_size", "noise_level", allow_reuse=True)
    def non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be non-negative. Given {v}")
        return v

    @root_validator(skip_on_failure=True, allow_reuse=True)
    def ordered_ranges(cls, values):
        # a lower max_objects wins, so max_objects = 0 means scenes without objects
        values["min_objects"] = min(values["min_objects"], values["max_objects"])
        if values["max_box_size"] < values["min_box_size"]:
            raise ValueError("max_box_size must be >= min_box_size")
        return values


class ModelConfigModel(BaseModel):
    seed_value: int
    image_height: int = 64
    image_width: int = 64
    class_names: List[str]
    nms: NmsConfigModel = NmsConfigModel()
    dataset: DatasetSpecModel

    @validator("image_height", "image_width", allow_reuse=True)
    def multiple_of_coarsest_stride(cls, v, field):
        if v <= 0 or v % 8 != 0:
            raise ValueError(f"{field.name} must be a positive multiple of 8. Given {v}")
        return v

    @validator("class_names", allow_reuse=True)
    def unique_class_names(cls, v):
        if not v:
            raise ValueError("class_names must not be empty")
        if len(set(v)) != len(v):
            raise ValueError(f"Duplicate class names found: {v}")
        return v


class ArchitectureModel(BaseModel):
    channels: Tuple[int, int, int] = (16, 32, 64)
    kernel_size: int = 5
    head_kernel_size: int = 3
    activation: Activation = Activation.SILU
    objectness_head: bool = True
    obj_bias_init: float = -4.0

    @validator("channels", allow_reuse=True)
    def positive_channels(cls, v):
        if any(c < 1 for c in v):
            raise ValueError(f"channels must be positive. Given {v}")
        return v

    @validator("kernel_size", "head_kernel_size", allow_reuse=True)
    def odd_kernel(cls, v, field):
        if v < 1 or v % 2 == 0:
            raise ValueError(f"{field.name} must be a positive odd integer. Given {v}")
        return v


class OptimizerConfigModel(BaseModel):
    lr: float = 3e-3
    weight_decay: float = 5e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs: int = 60
    batch_size: int = 16
    min_lr_ratio: float = 0.05
    flip_prob: float = 0.5

    @validator("lr", allow_reuse=True)
    def positive_lr(cls, v):
        if v <= 0:
            raise ValueError(f"lr must be positive. Given {v}")
        return v

    @validator("weight_decay", "epochs", allow_reuse=True)
    def non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be non-negative. Given {v}")
        return v

    @validator("batch_size", allow_reuse=True)
    def positive_batch(cls, v):
        if v < 1:
            raise ValueError(f"batch_size must be at least 1. Given {v}")
        return v

    @validator("min_lr_ratio", "flip_prob", allow_reuse=True)
    def in_unit_interval(cls, v, field):
        return _unit_interval(field.name, v)

    @validator("betas", allow_reuse=True)
    def betas_below_one(cls, v):
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError(f"betas must be in [0, 1). Given {v}")
        return v


class LossWeightsModel(BaseModel):
    cls: float = 1.0
    ciou: float = 1.0
    obj: float = 1.0

    @validator("cls", "ciou", "obj", allow_reuse=True)
    def non_negative_weight(cls, v, field):
        if v < 0:
            raise ValueError(f"loss weight {field.name} must be non-negative. Given {v}")
        return v


class HyperparametersModel(BaseModel):
    architecture: ArchitectureModel = ArchitectureModel()
    optimizer: OptimizerConfigModel = OptimizerConfigModel()
    loss_weights: LossWeightsModel = LossWeightsModel()


class BudgetModel(BaseModel):
    """
    Perturbation budget. An l2 budget may be given as `reference_epsilon`,
    quoted for 640x640 images and rescaled to the configured image size.
    """

    norm: Norm
    epsilon: Optional[float] = None
    reference_epsilon: Optional[float] = None
    steps: int
    step_size: Optional[float] = None
    random_start: bool = False

    @validator("epsilon", "reference_epsilon", "step_size", allow_reuse=True)
    def positive_if_set(cls, v, field):
        if v is not None and v <= 0:
            raise ValueError(f"{field.name} must be positive. Given {v}")
        return v

    @validator("steps", allow_reuse=True)
    def at_least_one_step(cls, v):
        if v < 1:
            raise ValueError(f"steps must be at least 1. Given {v}")
        return v

    @root_validator(skip_on_failure=True, allow_reuse=True)
    def epsilon_given(cls, values):
        if values["epsilon"] is None and values["reference_epsilon"] is None:
            raise ValueError("one of epsilon or reference_epsilon is required")
        if values["epsilon"] is None and values["norm"] != Norm.L2:
            raise ValueError("reference_epsilon is only defined for the l2 norm")
        return values


class AttackConfigModel(BaseModel):
    family: AttackFamily = AttackFamily.OVERLOAD
    rho: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.0
    target_class: Optional[int] = None
    confidence_mode: ConfidenceMode = ConfidenceMode.OBJECTNESS_CLASS
    top_m: int = 100
    budget: BudgetModel
    n_images: int = 50

    @validator("rho", "lambda3", allow_reuse=True)
    def non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be non-negative. Given {v}")
        return v

    @validator("top_m", allow_reuse=True)
    def at_least_two(cls, v):
        if v < 2:
            raise ValueError(f"top_m must be at least 2. Given {v}")
        return v

    @root_validator(skip_on_failure=True, allow_reuse=True)
    def targeted_needs_class(cls, values):
        if values["family"] == AttackFamily.TARGETED and values["target_class"] is None:
            raise ValueError("the targeted family requires target_class")
        return values


class EvalAttackModel(BaseModel):
    family: AttackFamily = AttackFamily.OVERLOAD
    budget: BudgetModel


class ATConfigModel(BaseModel):
    epochs_per_stage: int = 10
    start_ratio: float = 1.0
    ratio_step: float = 0.1
    max_ratio: float = 1.5
    schedule_direction: ScheduleDirection = ScheduleDirection.DECREASE
    fps: float = 30.0
    validation_images: int = 32
    init_from: InitFrom = InitFrom.STANDARD
    budget: BudgetModel
    eval_attack: EvalAttackModel

    @validator("epochs_per_stage", "validation_images", allow_reuse=True)
    def at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be at least 1. Given {v}")
        return v

    @validator("start_ratio", "ratio_step", "fps", allow_reuse=True)
    def positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be positive. Given {v}")
        return v


class WorkloadSpecModel(BaseModel):
    kind: WorkloadKind = WorkloadKind.UNIFORM
    canvas_size: float = 640.0
    min_box_size: float = 2.0
    max_box_size: float = 10.0
    conf_threshold: float = 0.25

    @root_validator(skip_on_failure=True, allow_reuse=True)
    def ordered_sizes(cls, values):
        if not 0 < values["min_box_size"] <= values["max_box_size"]:
            raise ValueError("box sizes must satisfy 0 < min_box_size <= max_box_size")
        return values


class BenchmarkConfigModel(BaseModel):
    sizes: List[int]
    repeats: int = 5
    warmup_runs: int = 1
    memory_guard: int = 1_000_000
    workload: WorkloadSpecModel = WorkloadSpecModel()
    backbone_repeats: int = 20

    @validator("sizes", allow_reuse=True)
    def positive_sizes(cls, v):
        if not v or any(s < 1 for s in v):
            raise ValueError(f"sizes must be a non-empty list of positive counts. Given {v}")
        return v

    @validator("repeats", allow_reuse=True)
    def enough_repeats(cls, v):
        if v < 3:
            raise ValueError(f"repeats must be at least 3. Given {v}")
        return v


class CorrelationModel(BaseModel):
    steps: int = 10
    pairs: List[Tuple[str, str]] = [("adv", "obj"), ("adv", "cls")]


class MarginModel(BaseModel):
    score_threshold: float = 0.25
    t_max: float = 20.0
    scan_step: float = 0.25
    tolerance: float = 1e-3
    norm: Norm = Norm.L2

    @validator("t_max", "scan_step", "tolerance", allow_reuse=True)
    def positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be positive. Given {v}")
        return v


class AnalysisConfigModel(BaseModel):
    n_images: int = 30
    correlation: CorrelationModel = CorrelationModel()
    margin: MarginModel = MarginModel()
    phantom_iou_threshold: float = 0.5
    ratios: List[float] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5]

    @validator("ratios", allow_reuse=True)
    def sorted_ratios(cls, v):
        if v != sorted(v) or any(r < 0 for r in v):
            raise ValueError(f"ratios must be non-negative and ascending. Given {v}")
        return v


class RunConfigModel(BaseModel):
    """The fully resolved configuration of a run."""

    model: ModelConfigModel
    hyperparameters: HyperparametersModel
    attack: AttackConfigModel
    defense: ATConfigModel
    benchmark: BenchmarkConfigModel
    analysis: AnalysisConfigModel


def validate_run_config(config: dict) -> dict:
    """
    Validate a resolved run configuration.

    Args:
        config (dict): sections model, hyperparameters, attack, defense,
            benchmark and analysis.

    Raises:
        ValueError: if any section is invalid

    Returns:
        dict: the validated configuration with every default made explicit
    """
    try:
        validated = RunConfigModel.parse_obj(config)
        return _plain(validated.dict())
    except ValidationError as exc:
        raise ValueError(f"Invalid config: {exc}") from exc


def _plain(value):
    """Enums to their values and tuples to lists, so the dict is JSON-ready."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
