"""End-to-end runs of the task scripts on a tiny configuration."""
import json
import os

import pandas as pd
import pytest

from analyze import run_analysis
from attack import run_attack
from capacity import run_capacity
from defend import run_defend
from evaluate import run_evaluation
from fit_latency import run_fit_latency
from gen_data import run_gen_data
from profile_nms import run_profile_nms
from run_config import resolve_run_config
from schema.dataset_schema import read_dataset
from train import run_training

pytestmark = pytest.mark.slow

LINF_BUDGET = {"norm": "linf", "epsilon": 0.03, "steps": 2}

TINY = {
    "model": {"dataset": {"n_train": 16, "n_test": 4}},
    "hyperparameters": {
        "architecture": {"channels": [4, 8, 8], "kernel_size": 3},
        "optimizer": {"epochs": 2, "batch_size": 8},
    },
    "benchmark": {"sizes": [20, 50, 100, 200, 500, 1000], "repeats": 3, "backbone_repeats": 3},
    "attack": {"n_images": 2, "budget": LINF_BUDGET},
    "defense": {
        "epochs_per_stage": 1,
        "validation_images": 2,
        "budget": {"norm": "linf", "epsilon": 0.01, "steps": 1},
        "eval_attack": {"budget": LINF_BUDGET},
    },
    "analysis": {
        "n_images": 2,
        "correlation": {"steps": 2},
        "margin": {"t_max": 2.0, "scan_step": 0.5, "tolerance": 0.05},
        "ratios": [0.0, 1.0],
    },
}


def tiny(command):
    return resolve_run_config(command, overrides=TINY)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("lab")
    files = {
        "train": str(root / "data" / "train.nmsds"),
        "test": str(root / "data" / "test.nmsds"),
        "standard": str(root / "artifacts" / "standard.nmsck"),
        "defended": str(root / "artifacts" / "defended.nmsck"),
        "history": str(root / "artifacts" / "train_history.csv"),
        "benchmark": str(root / "benchmarks" / "nms_benchmark.csv"),
        "latency": str(root / "artifacts" / "latency_model.json"),
        "capacity": str(root / "latency" / "capacity.json"),
        "schedule": str(root / "defense" / "schedule_log.csv"),
        "root": str(root),
    }
    run_gen_data(tiny("gen-data"), files["train"], files["test"])
    run_training(tiny("train"), files["train"], files["standard"], files["history"])
    run_profile_nms(tiny("profile-nms"), files["benchmark"])
    run_fit_latency(
        tiny("fit-latency"),
        t_backbone_ms=5.0,
        benchmark_file_path=files["benchmark"],
        checkpoint_path=files["standard"],
        latency_model_file_path=files["latency"],
    )
    return files


def test_generated_splits_and_training_outputs(workspace):
    assert len(read_dataset(workspace["train"])) == 16
    assert len(read_dataset(workspace["test"])) == 4
    history = pd.read_csv(workspace["history"])
    assert len(history) == 2
    assert os.path.isfile(os.path.join(os.path.dirname(workspace["standard"]), "train_config.json"))


def test_benchmark_and_latency_model(workspace):
    frame = pd.read_csv(workspace["benchmark"])
    assert frame["size"].tolist() == [20, 50, 100, 200, 500, 1000]
    with open(workspace["latency"], encoding="utf-8") as file:
        record = json.load(file)
    assert record["format_version"] == 1
    assert record["t_backbone_ns"] == 5_000_000
    assert record["alpha"] > 0 and record["beta"] > 0


def test_capacity_record(workspace):
    record = run_capacity(
        tiny("capacity"),
        t_budget_ms=1000.0,
        latency_model_file_path=workspace["latency"],
        capacity_file_path=workspace["capacity"],
    )
    assert record["c_max"] > 0
    assert record["fingerprint"] == tiny("capacity").fingerprint


def test_attack_writes_run_and_adversarial_images(workspace):
    out_dir = os.path.join(workspace["root"], "attacks")
    summary = run_attack(
        tiny("attack"),
        checkpoint_path=workspace["standard"],
        test_file_path=workspace["test"],
        output_dir=out_dir,
    )
    assert summary["n_images"] == 2
    adversarial = read_dataset(os.path.join(out_dir, "overload_adversarial.nmsds"))
    assert adversarial.images.shape == (2, 64, 64, 3)


def test_defend_then_evaluate(workspace):
    result = run_defend(
        tiny("defend"),
        t_budget_ms=1000.0,
        train_file_path=workspace["train"],
        test_file_path=workspace["test"],
        standard_checkpoint_path=workspace["standard"],
        defended_checkpoint_path=workspace["defended"],
        latency_model_file_path=workspace["latency"],
        schedule_log_file_path=workspace["schedule"],
    )
    assert result.accepted_ratio == 1.0
    assert pd.read_csv(workspace["schedule"])["accepted"].tolist() == [True]

    table = run_evaluation(
        tiny("eval"),
        standard_checkpoint_path=workspace["standard"],
        defended_checkpoint_path=workspace["defended"],
        test_file_path=workspace["test"],
        latency_model_file_path=workspace["latency"],
        output_dir=os.path.join(workspace["root"], "evaluation"),
    )
    assert sorted(table["model"]) == ["defended", "standard"]


def test_analysis_summary(workspace):
    summary = run_analysis(
        tiny("analyze"),
        checkpoint_path=workspace["standard"],
        test_file_path=workspace["test"],
        output_dir=os.path.join(workspace["root"], "analysis"),
    )
    assert summary["n_images"] == 2
    assert set(summary["median_correlation"]) == {"adv/obj", "adv/cls"}
