import json

import pytest

from run_config import build_budget, load_default_config, resolve_run_config


@pytest.fixture(scope="module")
def defaults():
    return load_default_config()


def test_defaults_resolve_with_every_section(defaults):
    run_config = resolve_run_config("attack", defaults=defaults)
    assert set(run_config.resolved) == {
        "model", "hyperparameters", "attack", "defense", "benchmark", "analysis"
    }
    assert run_config.seed == 123
    assert (run_config.height, run_config.width) == (64, 64)
    assert run_config.class_names == ["red", "green", "blue"]
    assert len(run_config.fingerprint) == 64


def test_reference_epsilon_is_rescaled_to_the_image_size(defaults):
    budget = resolve_run_config("attack", defaults=defaults).attack_budget()
    assert budget.norm == "l2"
    assert budget.epsilon == pytest.approx(7.0)
    assert budget.steps == 50


def test_explicit_epsilon_wins_over_the_reference():
    section = {
        "norm": "l2", "epsilon": 3.0, "reference_epsilon": 70.0,
        "steps": 5, "step_size": None, "random_start": False,
    }
    assert build_budget(section, 64, 64).epsilon == 3.0


def test_typed_configs_are_built_from_sections(defaults):
    run_config = resolve_run_config("defend", defaults=defaults)
    assert run_config.nms_config().iou_threshold == 0.6
    assert run_config.attack_config().conf_threshold == 0.25
    at_cfg = run_config.at_config()
    assert at_cfg.budget.norm == "linf"
    assert at_cfg.eval_budget.epsilon == pytest.approx(7.0)
    assert at_cfg.seed == 123
    assert run_config.optimizer_config().betas == (0.9, 0.999)
    assert run_config.workload_spec().kind == "uniform"


def test_fingerprint_is_stable_and_sensitive(defaults):
    first = resolve_run_config("attack", defaults=defaults)
    again = resolve_run_config("attack", defaults=defaults)
    assert first.fingerprint == again.fingerprint
    assert resolve_run_config("eval", defaults=defaults).fingerprint != first.fingerprint
    seeded = resolve_run_config(
        "attack", defaults=defaults, overrides={"model": {"seed_value": 124}}
    )
    assert seeded.fingerprint != first.fingerprint


def test_config_file_and_overrides_are_deep_merged(tmp_path, defaults):
    config_file = tmp_path / "experiment.json"
    config_file.write_text(json.dumps({"attack": {"budget": {"steps": 7}}, "model": {"seed_value": 9}}))
    run_config = resolve_run_config(
        "attack",
        config_path=str(config_file),
        overrides={"model": {"seed_value": 10}},
        defaults=defaults,
    )
    assert run_config.attack_budget().steps == 7
    # untouched siblings keep their defaults
    assert run_config.resolved["attack"]["budget"]["reference_epsilon"] == 70.0
    assert run_config.seed == 10
    # the defaults themselves are not mutated
    assert defaults["attack"]["budget"]["steps"] == 50


def test_saved_config_carries_the_fingerprint(tmp_path, defaults):
    run_config = resolve_run_config("profile-nms", defaults=defaults)
    file_path = run_config.save(str(tmp_path))
    assert file_path.endswith("profile_nms_config.json")
    record = json.loads((tmp_path / "profile_nms_config.json").read_text())
    assert record["fingerprint"] == run_config.fingerprint
    assert record["command"] == "profile-nms"


@pytest.mark.parametrize(
    "overrides",
    [
        {"model": {"image_height": 60}},
        {"model": {"class_names": ["red", "red"]}},
        {"model": {"dataset": {"n_train": 0}}},
        {"model": {"nms": {"iou_threshold": 1.5}}},
        {"hyperparameters": {"architecture": {"kernel_size": 4}}},
        {"attack": {"budget": {"reference_epsilon": None}}},
        {"attack": {"budget": {"norm": "linf"}}},
        {"attack": {"family": "targeted"}},
        {"attack": {"budget": {"steps": 0}}},
        {"defense": {"ratio_step": 0.0}},
        {"benchmark": {"repeats": 2}},
        {"benchmark": {"sizes": []}},
        {"analysis": {"ratios": [1.0, 0.5]}},
    ],
)
def test_invalid_configs_are_rejected(defaults, overrides):
    with pytest.raises(ValueError, match="Invalid config"):
        resolve_run_config("attack", overrides=overrides, defaults=defaults)


def test_targeted_family_with_a_class_is_accepted(defaults):
    run_config = resolve_run_config(
        "attack",
        overrides={"attack": {"family": "targeted", "target_class": 2}},
        defaults=defaults,
    )
    assert run_config.attack_config().target_class == 2


def test_max_objects_caps_min_objects(defaults):
    run_config = resolve_run_config(
        "gen-data", overrides={"model": {"dataset": {"max_objects": 0}}}, defaults=defaults
    )
    spec = run_config.resolved["model"]["dataset"]
    assert (spec["min_objects"], spec["max_objects"]) == (0, 0)
    with pytest.raises(ValueError, match="Invalid config"):
        resolve_run_config(
            "gen-data", overrides={"model": {"dataset": {"max_objects": -1}}}, defaults=defaults
        )
