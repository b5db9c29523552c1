import numpy as np
import pytest

from attacks.losses import AttackConfig
from attacks.pgd import PerturbationBudget
from data_models.report_model import validate_eval_report
from evaluation.metrics import average_precision, map50, match_image
from evaluation.report import (
    evaluate_condition,
    latency_report,
    pr_curves_frame,
    summary_table,
)
from geometry.boxes import BBox, Detection
from latency.model import predict_time
from nms.engine import NmsConfig
from schema.dataset_schema import GroundTruth

GTS = [
    GroundTruth.from_corners([[0, 0, 10, 10], [20, 20, 40, 40]], [0, 1]),
    GroundTruth.from_corners([[5, 5, 25, 15]], [0]),
]


def detection(corners, class_id, score, num_classes=2):
    class_scores = tuple(1.0 if k == class_id else 0.0 for k in range(num_classes))
    return Detection(BBox.from_corners(*corners), objectness=score, class_scores=class_scores)


def perfect_detections(score=0.9):
    return [
        [detection(b.corners, c, score) for b, c in zip(gt.boxes, gt.classes)] for gt in GTS
    ]


def test_perfect_detections_score_one():
    result = map50(perfect_detections(), GTS, num_classes=2)
    assert result.map50 == pytest.approx(1.0)
    assert result.per_class[0].n_gt == 2


def test_no_detections_score_zero():
    result = map50([[], []], GTS, num_classes=2)
    assert result.map50 == 0.0


def test_map_ignores_score_scale_and_detection_order():
    dets = perfect_detections()
    dets[0].append(detection([50, 50, 60, 60], 0, 0.3))
    reference = map50(dets, GTS, num_classes=2).map50

    rescaled = [
        [Detection(d.box, d.objectness * 0.5, d.class_scores) for d in image] for image in dets
    ]
    reordered = [list(reversed(image)) for image in dets]
    assert map50(rescaled, GTS, num_classes=2).map50 == pytest.approx(reference)
    assert map50(reordered, GTS, num_classes=2).map50 == pytest.approx(reference)


def test_confident_false_positive_halves_single_class_ap():
    gts = [GroundTruth.from_corners([[0, 0, 10, 10]], [0])]
    dets = [[detection([40, 40, 50, 50], 0, 0.9), detection([0, 0, 10, 10], 0, 0.8)]]
    assert map50(dets, gts, num_classes=2).map50 == pytest.approx(0.5)


def test_duplicate_detections_count_once():
    flags = match_image(
        np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float),
        np.array([0.9, 0.8]),
        np.array([[0, 0, 10, 10]], dtype=float),
    )
    assert flags.tolist() == [True, False]


def test_all_point_interpolation():
    assert average_precision(np.array([0.5, 1.0]), np.array([1.0, 1.0])) == pytest.approx(1.0)
    assert average_precision(np.array([0.5, 0.5, 1.0]), np.array([1.0, 0.5, 0.67])) == (
        pytest.approx(0.5 * 1.0 + 0.5 * 0.67)
    )


def test_detection_and_image_counts_must_agree():
    with pytest.raises(ValueError):
        map50([[]], GTS, num_classes=2)


def test_latency_report_uses_the_mean_count(two_term_model):
    estimate = latency_report([800, 1000, 1200], two_term_model)
    assert estimate.mean_count == 1000.0
    assert estimate.t_nms == pytest.approx(predict_time(two_term_model, 1000.0))
    assert estimate.fps == pytest.approx(1.0 / (0.010 + estimate.t_nms))
    assert latency_report([], two_term_model).fps == pytest.approx(100.0)


def test_clean_and_attacked_reports(tiny_detector, tiny_dataset, two_term_model):
    nms_cfg = NmsConfig(conf_threshold=0.005)
    clean = evaluate_condition(
        tiny_detector, tiny_dataset, nms_cfg, two_term_model, "standard", "abc"
    )
    assert clean["condition"] == "clean"
    assert clean["mean_attacked_count"] == clean["mean_clean_count"]
    assert clean["fingerprint"] == "abc"

    attacked = evaluate_condition(
        tiny_detector,
        tiny_dataset.subset(range(2)),
        nms_cfg,
        two_term_model,
        "standard",
        "abc",
        attack=(AttackConfig(family="daedalus"), PerturbationBudget("linf", 8.0 / 255, 2)),
    )
    assert attacked["condition"] == "daedalus-like"
    assert attacked["n_images"] == 2

    table = summary_table([clean, attacked])
    assert table["model"].tolist() == ["standard"]
    assert "clean_map50" in table.columns and "daedalus-like_predicted_fps" in table.columns
    curves = pr_curves_frame([clean, attacked])
    assert list(curves.columns) == ["model", "condition", "class", "recall", "precision"]


def test_report_validation_rejects_inconsistent_fps():
    report = {
        "model": "standard",
        "condition": "clean",
        "ap50": {"red": 0.5},
        "map50": 0.5,
        "n_images": 1,
        "mean_clean_count": 10.0,
        "mean_attacked_count": 10.0,
        "predicted_nms_ns": 1_000_000,
        "t_backbone_ns": 9_000_000,
        "predicted_fps": 100.0,
        "fingerprint": "abc",
    }
    assert validate_eval_report(report)["predicted_fps"] == 100.0
    with pytest.raises(ValueError):
        validate_eval_report(dict(report, predicted_fps=30.0))
    with pytest.raises(ValueError):
        validate_eval_report(dict(report, map50=1.5))
