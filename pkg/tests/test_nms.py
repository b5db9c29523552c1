import numpy as np
import pytest

from errors import PreconditionError
from geometry.boxes import BBox, Detection, iou
from nms.engine import NmsConfig, confidence_filter, nms, nms_arrays, postprocess


def reference_nms(corners, scores, iou_threshold):
    """Textbook greedy NMS over BBox values."""
    boxes = [BBox.from_corners(*c) for c in corners]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) <= iou_threshold for k in keep):
            keep.append(i)
    return keep


def random_candidates(rng, n, canvas=64.0):
    w = rng.uniform(2.0, 16.0, size=n)
    h = rng.uniform(2.0, 16.0, size=n)
    x1 = rng.uniform(0.0, canvas - w)
    y1 = rng.uniform(0.0, canvas - h)
    corners = np.stack([x1, y1, x1 + w, y1 + h], axis=1)
    return corners, rng.uniform(0.0, 1.0, size=n)


def test_matches_reference_on_random_inputs(rng):
    for n in (0, 1, 2, 5, 30, 120):
        for threshold in (0.3, 0.5, 0.7):
            corners, scores = random_candidates(rng, n)
            keep, _ = nms_arrays(corners, scores, threshold)
            assert keep.tolist() == reference_nms(corners, scores, threshold)


def test_empty_input_does_no_work():
    keep, trace = nms_arrays(np.zeros((0, 4)), np.zeros(0), 0.5)
    assert keep.size == 0
    assert (trace.iou_ops, trace.transfer_ops, trace.while_iterations) == (0, 0, 0)
    assert trace.input_count == trace.output_count == 0


def test_disjoint_boxes_are_all_kept_with_quadratic_iou_work():
    n = 10
    corners = np.array([[i * 10.0, 0.0, i * 10.0 + 5.0, 5.0] for i in range(n)])
    scores = np.linspace(0.9, 0.1, n)
    keep, trace = nms_arrays(corners, scores, 0.5)
    assert keep.tolist() == list(range(n))
    assert trace.while_iterations == n
    assert trace.iou_ops == n * (n - 1) // 2
    assert trace.transfer_ops == n


def test_identical_boxes_collapse_in_one_iteration():
    n = 25
    corners = np.tile([[4.0, 4.0, 20.0, 20.0]], (n, 1))
    scores = np.full(n, 0.8)
    keep, trace = nms_arrays(corners, scores, 0.5)
    # equal scores: the lowest index wins
    assert keep.tolist() == [0]
    assert trace.while_iterations == 1
    assert trace.iou_ops == n - 1
    assert trace.transfer_ops == n


def test_iou_equal_to_threshold_is_not_suppressed():
    a = [0.0, 0.0, 2.0, 2.0]
    b = [1.0, 0.0, 3.0, 2.0]  # IoU(a, b) = 1/3
    keep, _ = nms_arrays(np.array([a, b]), np.array([0.9, 0.8]), 1.0 / 3.0)
    assert keep.tolist() == [0, 1]
    keep, _ = nms_arrays(np.array([a, b]), np.array([0.9, 0.8]), 0.3)
    assert keep.tolist() == [0]


def test_trace_counters_are_consistent(rng):
    corners, scores = random_candidates(rng, 200)
    keep, trace = nms_arrays(corners, scores, 0.5)
    assert trace.input_count == 200
    assert trace.output_count == len(keep) == trace.while_iterations
    # every input box is either emitted or suppressed exactly once
    assert trace.transfer_ops == trace.input_count
    assert trace.iou_ops <= 200 * 199 // 2
    assert trace.wall_time_total == trace.wall_time_compute + trace.wall_time_logic
    assert trace.wall_time_compute >= 0 and trace.wall_time_logic >= 0


def test_output_is_in_descending_score_order(rng):
    corners, scores = random_candidates(rng, 80)
    keep, _ = nms_arrays(corners, scores, 0.5)
    kept_scores = scores[keep]
    assert np.all(np.diff(kept_scores) <= 0)


def test_nms_of_the_survivors_keeps_them_all(rng):
    for threshold in (0.3, 0.5, 0.7):
        corners, scores = random_candidates(rng, 150)
        keep, _ = nms_arrays(corners, scores, threshold)
        again, trace = nms_arrays(corners[keep], scores[keep], threshold)
        assert again.tolist() == list(range(len(keep)))
        assert trace.output_count == trace.input_count


def test_class_aware_nms_keeps_overlapping_boxes_of_other_classes():
    corners = np.array([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])
    scores = np.array([0.9, 0.8])
    agnostic, _ = nms_arrays(corners, scores, 0.5)
    aware, _ = nms_arrays(corners, scores, 0.5, class_ids=np.array([0, 1]))
    assert agnostic.tolist() == [0]
    assert aware.tolist() == [0, 1]


def test_max_detections_stops_the_loop(rng):
    corners = np.array([[i * 10.0, 0.0, i * 10.0 + 5.0, 5.0] for i in range(6)])
    keep, trace = nms_arrays(corners, np.linspace(0.9, 0.4, 6), 0.5, max_detections=2)
    assert keep.tolist() == [0, 1]
    assert trace.while_iterations == 2


def test_confidence_filter_is_strict():
    box = BBox(5.0, 5.0, 4.0, 4.0)
    dets = [
        Detection(box, objectness=0.5, class_scores=(0.5,)),  # score 0.25
        Detection(box, objectness=0.6, class_scores=(0.5,)),  # score 0.30
    ]
    assert confidence_filter(dets, 0.25) == [dets[1]]


def test_postprocess_filters_then_suppresses():
    dets = [
        Detection(BBox(10.0, 10.0, 8.0, 8.0), 0.9, (0.9, 0.1)),
        Detection(BBox(10.5, 10.0, 8.0, 8.0), 0.8, (0.9, 0.1)),
        Detection(BBox(40.0, 40.0, 8.0, 8.0), 0.7, (0.1, 0.9)),
        Detection(BBox(50.0, 10.0, 8.0, 8.0), 0.1, (0.5, 0.5)),
    ]
    kept, trace = postprocess(dets, NmsConfig(conf_threshold=0.25, iou_threshold=0.5))
    assert kept == [dets[0], dets[2]]
    assert trace.input_count == 3

    kept_all, _ = nms(dets, NmsConfig(conf_threshold=0.25, iou_threshold=0.5))
    assert dets[3] in kept_all


def test_config_rejects_out_of_range_thresholds():
    with pytest.raises(PreconditionError):
        NmsConfig(iou_threshold=1.5)
    with pytest.raises(PreconditionError):
        NmsConfig(conf_threshold=-0.1)
