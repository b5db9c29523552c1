"""Resolved run configuration: JSON defaults, an optional config file, then flags."""
import os
from dataclasses import dataclass
from typing import Dict, Optional

from attacks.losses import AttackConfig
from attacks.pgd import PerturbationBudget, scaled_l2_epsilon
from config import paths
from data_models.config_validator import validate_run_config
from defense.training import ATConfig
from nms.benchmark import WorkloadSpec
from nms.engine import NmsConfig
from prediction.predictor_model import OptimizerConfig
from utils import config_fingerprint, deep_update, read_json_as_dict, save_json

SECTION_FILES = {
    "model": paths.MODEL_CONFIG_FILE_PATH,
    "hyperparameters": paths.DEFAULT_HYPERPARAMETERS_FILE_PATH,
    "attack": paths.ATTACK_CONFIG_FILE_PATH,
    "defense": paths.DEFENSE_CONFIG_FILE_PATH,
    "benchmark": paths.BENCHMARK_CONFIG_FILE_PATH,
    "analysis": paths.ANALYSIS_CONFIG_FILE_PATH,
}


def load_default_config(section_files: Optional[Dict[str, str]] = None) -> Dict:
    """Read every default config section from its JSON file."""
    section_files = section_files or SECTION_FILES
    return {name: read_json_as_dict(path) for name, path in section_files.items()}


def build_budget(section: Dict, height: int, width: int) -> PerturbationBudget:
    """
    Budget from a validated `budget` section. A missing epsilon is derived
    from `reference_epsilon` for the configured image size.
    """
    epsilon = section["epsilon"]
    if epsilon is None:
        epsilon = scaled_l2_epsilon(section["reference_epsilon"], height, width)
    return PerturbationBudget(
        norm=section["norm"],
        epsilon=float(epsilon),
        steps=int(section["steps"]),
        step_size=section["step_size"],
        random_start=bool(section["random_start"]),
    )


@dataclass(frozen=True)
class RunConfig:
    """
    The fully explicit configuration of one command invocation.

    `resolved` holds every section with defaults made explicit; `fingerprint`
    is the SHA-256 of its canonical JSON dump together with the command name.
    """

    command: str
    resolved: Dict
    fingerprint: str

    @property
    def seed(self) -> int:
        return int(self.resolved["model"]["seed_value"])

    @property
    def height(self) -> int:
        return int(self.resolved["model"]["image_height"])

    @property
    def width(self) -> int:
        return int(self.resolved["model"]["image_width"])

    @property
    def class_names(self):
        return list(self.resolved["model"]["class_names"])

    def nms_config(self) -> NmsConfig:
        return NmsConfig(**self.resolved["model"]["nms"])

    def attack_budget(self) -> PerturbationBudget:
        return build_budget(self.resolved["attack"]["budget"], self.height, self.width)

    def attack_config(self) -> AttackConfig:
        section = dict(self.resolved["attack"])
        section.pop("budget")
        section.pop("n_images")
        return AttackConfig(
            **section, conf_threshold=self.nms_config().conf_threshold
        )

    def optimizer_config(self) -> OptimizerConfig:
        section = dict(self.resolved["hyperparameters"]["optimizer"])
        section.pop("epochs")
        section["betas"] = tuple(section["betas"])
        return OptimizerConfig(**section)

    def at_config(self) -> ATConfig:
        defense = self.resolved["defense"]
        return ATConfig(
            epochs_per_stage=int(defense["epochs_per_stage"]),
            budget=build_budget(defense["budget"], self.height, self.width),
            start_ratio=float(defense["start_ratio"]),
            ratio_step=float(defense["ratio_step"]),
            max_ratio=float(defense["max_ratio"]),
            schedule_direction=defense["schedule_direction"],
            optimizer=self.optimizer_config(),
            eval_attack=AttackConfig(
                family=defense["eval_attack"]["family"],
                conf_threshold=self.nms_config().conf_threshold,
            ),
            eval_budget=build_budget(
                defense["eval_attack"]["budget"], self.height, self.width
            ),
            nms=self.nms_config(),
            seed=self.seed,
        )

    def workload_spec(self) -> WorkloadSpec:
        return WorkloadSpec(**self.resolved["benchmark"]["workload"], seed=self.seed)

    def to_record(self) -> Dict:
        return {
            "command": self.command,
            "fingerprint": self.fingerprint,
            "config": self.resolved,
        }

    def save(self, out_dir: str) -> str:
        """Write the resolved config next to a command's artifacts."""
        file_path = os.path.join(out_dir, f"{self.command.replace('-', '_')}_config.json")
        save_json(file_path, self.to_record())
        return file_path


def resolve_run_config(
    command: str,
    config_path: Optional[str] = None,
    overrides: Optional[Dict] = None,
    defaults: Optional[Dict] = None,
) -> RunConfig:
    """
    Resolve and validate the configuration of a command.

    Args:
        command (str): subcommand name, part of the fingerprint.
        config_path (str, optional): JSON file with partial sections to merge
            over the defaults.
        overrides (dict, optional): partial sections from explicit flags,
            merged last.
        defaults (dict, optional): default sections; read from src/config
            when omitted.

    Raises:
        ValueError: if the merged configuration is invalid.
    """
    resolved = defaults if defaults is not None else load_default_config()
    if config_path is not None:
        resolved = deep_update(resolved, read_json_as_dict(config_path))
    resolved = validate_run_config(deep_update(resolved, overrides))
    fingerprint = config_fingerprint({"command": command, "config": resolved})
    return RunConfig(command=command, resolved=resolved, fingerprint=fingerprint)
