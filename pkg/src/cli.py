"""Command-line entry point: one binary, one subcommand per pipeline task.

Exit codes: 0 on success, 2 on precondition, config or input-file errors,
3 on infeasibility results (BudgetInfeasible, CapacityUnreachable).
"""
import argparse
import os
import sys
from typing import Callable, Dict, List, Optional

from config import paths
from errors import BudgetInfeasible, CapacityUnreachable
from logger import get_logger
from run_config import RunConfig, resolve_run_config

logger = get_logger(task_name="cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


def _set(overrides: Dict, dotted_key: str, value) -> None:
    """Put `value` at a dotted path (e.g. "attack.budget.steps") if it was given."""
    if value is None:
        return
    keys = dotted_key.split(".")
    node = overrides
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _checkpoint(choice: str) -> str:
    if choice == "standard":
        return paths.STANDARD_CHECKPOINT_PATH
    if choice == "defended":
        return paths.DEFENDED_CHECKPOINT_PATH
    return choice


def _out(args: argparse.Namespace, default_dir: str, file_name: Optional[str] = None) -> str:
    directory = args.out or default_dir
    return os.path.join(directory, file_name) if file_name else directory


FLAG_KEYS: Dict[str, Dict[str, str]] = {
    "gen-data": {
        "n_train": "model.dataset.n_train",
        "n_test": "model.dataset.n_test",
        "min_objects": "model.dataset.min_objects",
        "max_objects": "model.dataset.max_objects",
    },
    "profile-nms": {
        "sizes": "benchmark.sizes",
        "repeats": "benchmark.repeats",
        "workload": "benchmark.workload.kind",
    },
    "train": {"epochs": "hyperparameters.optimizer.epochs"},
    "attack": {
        "family": "attack.family",
        "norm": "attack.budget.norm",
        "epsilon": "attack.budget.epsilon",
        "steps": "attack.budget.steps",
        "target_class": "attack.target_class",
        "n_images": "attack.n_images",
    },
    "defend": {
        "epochs_per_stage": "defense.epochs_per_stage",
        "start_ratio": "defense.start_ratio",
        "ratio_step": "defense.ratio_step",
        "schedule_direction": "defense.schedule_direction",
        "init_from": "defense.init_from",
    },
    "eval": {"n_images": "attack.n_images"},
    "analyze": {"n_images": "analysis.n_images"},
}


def build_overrides(args: argparse.Namespace) -> Dict:
    """Map explicit flags onto config sections; flags left unset change nothing."""
    overrides: Dict = {}
    _set(overrides, "model.seed_value", args.seed)
    for flag, key in FLAG_KEYS.get(args.command, {}).items():
        _set(overrides, key, getattr(args, flag, None))
    return overrides


def _gen_data(args, run_config: RunConfig):
    from gen_data import run_gen_data

    run_gen_data(
        run_config,
        train_file_path=_out(args, paths.DATA_DIR, "train.nmsds"),
        test_file_path=_out(args, paths.DATA_DIR, "test.nmsds"),
    )


def _profile_nms(args, run_config: RunConfig):
    from profile_nms import run_profile_nms

    run_profile_nms(
        run_config, benchmark_file_path=_out(args, paths.BENCHMARKS_DIR, "nms_benchmark.csv")
    )


def _fit_latency(args, run_config: RunConfig):
    from fit_latency import run_fit_latency

    run_fit_latency(
        run_config,
        t_backbone_ms=args.t_backbone_ms,
        latency_model_file_path=_out(
            args, paths.MODEL_ARTIFACTS_PATH, "latency_model.json"
        ),
    )


def _capacity(args, run_config: RunConfig):
    from capacity import run_capacity

    run_capacity(
        run_config,
        fps=args.fps,
        t_budget_ms=args.t_budget_ms,
        capacity_file_path=_out(args, paths.LATENCY_DIR, "capacity.json"),
    )


def _train(args, run_config: RunConfig):
    from train import run_training

    directory = _out(args, paths.MODEL_ARTIFACTS_PATH)
    run_training(
        run_config,
        checkpoint_path=os.path.join(directory, "standard.nmsck"),
        history_file_path=os.path.join(directory, "train_history.csv"),
    )


def _attack(args, run_config: RunConfig):
    from attack import run_attack

    run_attack(
        run_config,
        checkpoint_path=_checkpoint(args.checkpoint),
        output_dir=_out(args, paths.ATTACKS_DIR),
        semantics=args.semantics,
    )


def _defend(args, run_config: RunConfig):
    from defend import run_defend

    directory = _out(args, paths.DEFENSE_DIR)
    run_defend(
        run_config,
        fps=args.fps,
        t_budget_ms=args.t_budget_ms,
        defended_checkpoint_path=(
            os.path.join(directory, "defended.nmsck")
            if args.out
            else paths.DEFENDED_CHECKPOINT_PATH
        ),
        schedule_log_file_path=os.path.join(directory, "schedule_log.csv"),
    )


def _eval(args, run_config: RunConfig):
    from evaluate import run_evaluation

    run_evaluation(run_config, output_dir=_out(args, paths.EVALUATION_DIR))


def _analyze(args, run_config: RunConfig):
    from analyze import run_analysis

    run_analysis(
        run_config,
        checkpoint_path=_checkpoint(args.checkpoint),
        output_dir=_out(args, paths.ANALYSIS_DIR),
    )


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], None]] = {
    "gen-data": _gen_data,
    "profile-nms": _profile_nms,
    "fit-latency": _fit_latency,
    "capacity": _capacity,
    "train": _train,
    "attack": _attack,
    "defend": _defend,
    "eval": _eval,
    "analyze": _analyze,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file merged over the default config")
    common.add_argument("--seed", type=int, help="run seed (model.seed_value)")
    common.add_argument("--out", help="directory for this command's outputs")

    parser = argparse.ArgumentParser(
        prog="nms-latency-lab",
        description="NMS latency attacks and background-attentive adversarial training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="generate synthetic scenes")
    gen.add_argument("--n-train", type=int)
    gen.add_argument("--n-test", type=int)
    gen.add_argument("--min-objects", type=int)
    gen.add_argument("--max-objects", type=int)

    profile = sub.add_parser("profile-nms", parents=[common], help="time NMS vs |C|")
    profile.add_argument("--sizes", type=int, nargs="+")
    profile.add_argument("--repeats", type=int)
    profile.add_argument("--workload", choices=["uniform", "dense", "disjoint_grid"])

    fit = sub.add_parser("fit-latency", parents=[common], help="fit the latency models")
    fit.add_argument("--t-backbone-ms", type=float)

    cap = sub.add_parser("capacity", parents=[common], help="C_max for a frame budget")
    budget = cap.add_mutually_exclusive_group()
    budget.add_argument("--fps", type=float)
    budget.add_argument("--t-budget-ms", type=float)

    train = sub.add_parser("train", parents=[common], help="standard detector training")
    train.add_argument("--epochs", type=int)

    attack = sub.add_parser("attack", parents=[common], help="run a latency attack")
    attack.add_argument("--family", choices=["overload", "phantom", "daedalus", "targeted"])
    attack.add_argument("--norm", choices=["linf", "l2"])
    attack.add_argument("--epsilon", type=float)
    attack.add_argument("--steps", type=int)
    attack.add_argument("--target-class", type=int)
    attack.add_argument("--n-images", type=int)
    attack.add_argument("--checkpoint", default="standard")
    attack.add_argument("--semantics", action="store_true")

    defend = sub.add_parser("defend", parents=[common], help="background-attentive AT")
    defend_budget = defend.add_mutually_exclusive_group()
    defend_budget.add_argument("--fps", type=float)
    defend_budget.add_argument("--t-budget-ms", type=float)
    defend.add_argument("--epochs-per-stage", type=int)
    defend.add_argument("--start-ratio", type=float)
    defend.add_argument("--ratio-step", type=float)
    defend.add_argument("--schedule-direction", choices=["decrease", "increase"])
    defend.add_argument("--init-from", choices=["standard", "scratch"])

    evaluate = sub.add_parser("eval", parents=[common], help="clean and attacked evaluation")
    evaluate.add_argument("--n-images", type=int)

    analyze = sub.add_parser("analyze", parents=[common], help="property analyses")
    analyze.add_argument("--n-images", type=int)
    analyze.add_argument("--checkpoint", default="standard")
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (BudgetInfeasible, CapacityUnreachable)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ValueError, FileNotFoundError)):
        return EXIT_USAGE
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_config = resolve_run_config(
            args.command, config_path=args.config, overrides=build_overrides(args)
        )
        logger.info(f"{args.command}: config fingerprint {run_config.fingerprint}")
        COMMANDS[args.command](args, run_config)
    except Exception as exc:
        code = exit_code_for(exc)
        logger.error(f"{args.command} failed (exit code {code}): {exc}")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
