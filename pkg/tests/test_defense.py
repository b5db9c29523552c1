import math

import numpy as np
import pytest

from attacks.losses import AttackConfig
from attacks.pgd import PerturbationBudget
from defense.masks import background_mask, build_mask, build_masks
from defense.training import ATConfig, at_stage, masked_pgd, underload_train
from errors import CapacityUnreachable, PreconditionError
from nms.engine import NmsConfig
from prediction.predictor_model import OptimizerConfig
from schema.dataset_schema import GroundTruth

ONE_BOX = GroundTruth.from_corners([[10, 20, 20, 30]], [0])


def tiny_at_config(**overrides):
    settings = dict(
        epochs_per_stage=1,
        budget=PerturbationBudget(norm="linf", epsilon=4.0 / 255, steps=1),
        optimizer=OptimizerConfig(batch_size=4),
        eval_attack=AttackConfig(family="overload"),
        eval_budget=PerturbationBudget(norm="linf", epsilon=4.0 / 255, steps=1),
        nms=NmsConfig(conf_threshold=0.25),
    )
    settings.update(overrides)
    return ATConfig(**settings)


def test_unit_ratio_protects_exactly_the_box():
    mask = build_mask(ONE_BOX, 1.0, 64, 64)
    assert mask.dtype == np.float32
    assert int((mask == 0).sum()) == 100
    assert (mask[20:30, 10:20] == 0).all()


def test_ratio_scales_the_protected_window():
    half = build_mask(ONE_BOX, 0.5, 64, 64)
    assert int((half == 0).sum()) == 25
    double = build_mask(ONE_BOX, 2.0, 64, 64)
    assert int((double == 0).sum()) == 400


def test_zero_ratio_or_no_objects_allows_every_pixel():
    assert build_mask(ONE_BOX, 0.0, 64, 64).min() == 1.0
    assert build_mask(GroundTruth(), 1.0, 64, 64).min() == 1.0


def test_windows_are_clipped_to_the_image():
    corner_box = GroundTruth.from_corners([[0, 0, 10, 10]], [1])
    mask = build_mask(corner_box, 3.0, 32, 32)
    # a 30x30 window centered on (5, 5) covers [0, 20) on both axes
    assert int((mask == 0).sum()) == 400


def test_negative_ratio_is_rejected():
    with pytest.raises(PreconditionError):
        build_mask(ONE_BOX, -0.1, 64, 64)


def test_background_mask_and_batches(tiny_dataset):
    masks = build_masks(tiny_dataset.ground_truths[:3], 1.0, 64, 64)
    assert masks.shape == (3, 64, 64)
    np.testing.assert_array_equal(
        masks[0], background_mask(tiny_dataset.ground_truths[0], 64, 64)
    )


def test_masked_pgd_never_touches_protected_pixels(tiny_detector, tiny_dataset):
    gts = tiny_dataset.ground_truths[:3]
    masks = build_masks(gts, 1.0, 64, 64)
    budget = PerturbationBudget(norm="linf", epsilon=8.0 / 255, steps=3)
    delta = masked_pgd(tiny_detector, tiny_dataset.images[:3], gts, masks, budget)
    assert delta.shape == (3, 64, 64, 3)
    assert np.abs(delta * (1.0 - masks[..., None])).max() == 0.0

    single = masked_pgd(tiny_detector, tiny_dataset.images[0], gts[0], masks[0], budget)
    assert single.shape == (64, 64, 3)


def test_ratio_schedule_is_rounded():
    cfg = ATConfig(start_ratio=1.0, ratio_step=0.1)
    assert [cfg.ratio_at(k) for k in range(4)] == [1.0, 0.9, 0.8, 0.7]
    assert cfg.exhausted(-0.1) and not cfg.exhausted(0.0)

    growing = ATConfig(start_ratio=1.0, ratio_step=0.25, schedule_direction="increase")
    assert growing.ratio_at(2) == 1.5
    assert growing.exhausted(1.75) and not growing.exhausted(1.5)


@pytest.mark.parametrize(
    "kwargs", [{"epochs_per_stage": 0}, {"ratio_step": 0.0}, {"schedule_direction": "sideways"}]
)
def test_invalid_at_configs_are_rejected(kwargs):
    with pytest.raises(PreconditionError):
        ATConfig(**kwargs)


def test_stage_training_returns_a_new_detector(tiny_detector, tiny_dataset):
    result = at_stage(tiny_detector, tiny_dataset, 0.5, tiny_at_config())
    assert result.detector is not tiny_detector
    assert len(result.history) == 1


def test_non_positive_capacity_is_unreachable_before_training(tiny_detector, tiny_dataset):
    with pytest.raises(CapacityUnreachable) as info:
        underload_train(tiny_detector, tiny_dataset, tiny_at_config(), c_max=0)
    assert info.value.schedule_log == []


def test_unbounded_capacity_accepts_the_first_stage(tiny_detector, tiny_dataset):
    result = underload_train(
        tiny_detector,
        tiny_dataset,
        tiny_at_config(),
        c_max=math.inf,
        validation=tiny_dataset.subset(range(2)),
    )
    assert result.accepted_ratio == 1.0
    assert len(result.schedule_log) == 1
    assert result.schedule_log[0]["accepted"] is True


def test_exhausted_schedule_carries_the_log(tiny_detector, tiny_dataset):
    # with no confidence filter every cell is a candidate, so C_max is never met
    cfg = tiny_at_config(start_ratio=0.2, ratio_step=0.1, nms=NmsConfig(conf_threshold=0.0))
    with pytest.raises(CapacityUnreachable) as info:
        underload_train(
            tiny_detector,
            tiny_dataset.subset(range(4)),
            cfg,
            c_max=100,
            validation=tiny_dataset.subset(range(2)),
        )
    log = info.value.schedule_log
    assert [row["ratio"] for row in log] == [0.2, 0.1, 0.0]
    assert not any(row["accepted"] for row in log)
    assert all(row["attacked_count_mean"] >= 100 for row in log)
