import numpy as np
import pytest

from analysis.properties import (
    boundary_margin,
    cosine_similarity,
    loss_correlation,
    monotonicity_sweep,
    pearson,
    phantom_stats,
    region_mask,
)
from attacks.losses import AttackConfig
from attacks.pgd import PGD, PerturbationBudget, attack_objective
from errors import PreconditionError
from nms.engine import NmsConfig
from prediction.predictor_model import decode_tensors

BUDGET = PerturbationBudget(norm="linf", epsilon=8.0 / 255, steps=2)


def test_similarity_measures():
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(a, a) == 1.0
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    assert cosine_similarity(a, np.zeros(3)) == 0.0
    assert pearson(a, 2 * a + 1) == pytest.approx(1.0)


def test_zero_steps_compares_clean_outputs(tiny_detector, tiny_dataset):
    trace = loss_correlation(
        tiny_detector, tiny_dataset.images[:3], "adv", "obj", 0, BUDGET,
        gts=tiny_dataset.ground_truths[:3],
    )
    assert trace.cosine.shape == (3, 1)
    np.testing.assert_array_equal(trace.cosine, 1.0)
    np.testing.assert_array_equal(trace.pearson, 1.0)


def test_a_loss_is_perfectly_correlated_with_itself(tiny_detector, tiny_dataset):
    trace = loss_correlation(
        tiny_detector, tiny_dataset.images[:2], "obj", "obj", 2, BUDGET,
        gts=tiny_dataset.ground_truths[:2],
    )
    assert trace.cosine.shape == (2, 3)
    np.testing.assert_allclose(trace.median_cosine, 1.0)
    frame = trace.to_dataframe()
    assert len(frame) == 6
    assert set(frame["pair"]) == {"obj/obj"}


def test_different_losses_give_a_bounded_trace(tiny_detector, tiny_dataset):
    trace = loss_correlation(
        tiny_detector, tiny_dataset.images[:2], "adv", "total", 2, BUDGET,
        gts=tiny_dataset.ground_truths[:2],
    )
    # step 0 is the shared starting point
    np.testing.assert_allclose(trace.cosine[:, 0], 1.0)
    assert np.all(np.abs(trace.cosine) <= 1.0)
    assert np.all(np.abs(trace.pearson) <= 1.0)


def test_unknown_correlation_loss_is_rejected(tiny_detector, tiny_dataset):
    with pytest.raises(PreconditionError):
        loss_correlation(tiny_detector, tiny_dataset.images[:1], "adv", "speed", 1, BUDGET)


def test_region_masks_partition_the_image(tiny_dataset):
    gt = tiny_dataset.ground_truths[0]
    background = region_mask(gt, "background", 64, 64)
    objects = region_mask(gt, "object", 64, 64)
    np.testing.assert_array_equal(background + objects, 1.0)
    with pytest.raises(PreconditionError):
        region_mask(gt, "sky", 64, 64)


def test_zero_threshold_crosses_at_the_clean_image(tiny_detector, tiny_dataset):
    estimate = boundary_margin(
        tiny_detector, tiny_dataset.images[0], "background", 0.0, gt=tiny_dataset.ground_truths[0]
    )
    assert estimate.crossed
    assert estimate.margin == 0.0
    assert estimate.iterations == 1


def test_unreachable_threshold_scans_the_whole_range(tiny_detector, tiny_dataset):
    direction = np.ones((64, 64, 3))
    estimate = boundary_margin(
        tiny_detector,
        tiny_dataset.images[0],
        "background",
        1.5,
        direction=direction,
        t_max=1.0,
        scan_step=0.25,
        norm="linf",
    )
    assert not estimate.crossed
    assert estimate.margin == float("inf")
    assert estimate.iterations == 5
    assert estimate.as_dict()["margin"] is None


def test_margin_brackets_the_first_crossing(double_detector, tiny_dataset):
    image = tiny_dataset.images[1]
    gt = tiny_dataset.ground_truths[1]
    clean = double_detector.forward(image)
    best = float(decode_tensors(clean).scores.max())
    estimate = boundary_margin(
        double_detector, image, "background", best * 1.05, gt=gt, t_max=40.0, tolerance=1e-2
    )
    if estimate.crossed:
        assert estimate.lower <= estimate.margin
        assert estimate.upper - estimate.lower <= 1e-2 + 1e-12
    else:
        assert estimate.upper == float("inf")


def test_identical_images_have_no_phantoms(tiny_detector, tiny_dataset):
    images = tiny_dataset.images[:3]
    stats = phantom_stats(
        tiny_detector,
        images,
        images,
        tiny_dataset.ground_truths[:3],
        NmsConfig(conf_threshold=0.005, iou_threshold=0.6),
        iou_threshold=0.5,
    )
    assert stats.total == 0
    assert stats.summary()["n_images"] == 3


def test_phantoms_are_split_between_objects_and_background(tiny_detector, tiny_dataset):
    images = tiny_dataset.images[:3]
    gts = tiny_dataset.ground_truths[:3]
    attacker = PGD(tiny_detector, BUDGET, attack_objective(AttackConfig()))
    result = attacker.attack(images)
    stats = phantom_stats(
        tiny_detector,
        images,
        result.adversarial,
        gts,
        NmsConfig(conf_threshold=0.005),
        deltas=result.delta,
    )
    frame = stats.per_image
    assert (frame["on_object"] + frame["off_object"] == frame["phantoms"]).all()
    assert 0.0 <= stats.off_object_share <= 1.0


def test_sweep_requires_sorted_ratios(tiny_detector, tiny_dataset):
    with pytest.raises(PreconditionError):
        monotonicity_sweep(
            tiny_detector,
            tiny_dataset.images[:2],
            tiny_dataset.ground_truths[:2],
            [1.0, 0.5],
            BUDGET,
        )


def test_sweep_reports_perturbable_area_per_ratio(tiny_detector, tiny_dataset):
    sweep = monotonicity_sweep(
        tiny_detector,
        tiny_dataset.images[:2],
        tiny_dataset.ground_truths[:2],
        [0.0, 0.5, 1.0],
        BUDGET,
        attack_cfg=AttackConfig(conf_threshold=0.005),
    )
    assert list(sweep.table["ratio"]) == [0.0, 0.5, 1.0]
    pixels = sweep.table["perturbable_pixels"].tolist()
    assert pixels[0] == 64 * 64
    assert pixels == sorted(pixels, reverse=True)
    assert sweep.clean_count >= 0
