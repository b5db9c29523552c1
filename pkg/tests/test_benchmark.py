import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import r2_score

from errors import PreconditionError
from nms.benchmark import (
    BENCHMARK_COLUMNS,
    WorkloadSpec,
    dataframe_to_traces,
    generate_workload,
    microbenchmark,
    samples_to_dataframe,
)
from nms.engine import nms_arrays


def test_workloads_are_seeded():
    spec = WorkloadSpec(kind="uniform", seed=11)
    a_boxes, a_scores = generate_workload(spec, 50)
    b_boxes, b_scores = generate_workload(spec, 50)
    np.testing.assert_array_equal(a_boxes, b_boxes)
    np.testing.assert_array_equal(a_scores, b_scores)

    c_boxes, _ = generate_workload(WorkloadSpec(kind="uniform", seed=12), 50)
    assert not np.array_equal(a_boxes, c_boxes)


@pytest.mark.parametrize("kind", ["uniform", "dense", "disjoint_grid"])
def test_workload_shapes_and_scores(kind):
    spec = WorkloadSpec(kind=kind, conf_threshold=0.25)
    corners, scores = generate_workload(spec, 40)
    assert corners.shape == (40, 4)
    assert np.all(corners[:, 2] > corners[:, 0])
    assert np.all(corners[:, 3] > corners[:, 1])
    assert np.all(scores > 0.25)


def test_unknown_workload_kind_is_rejected():
    with pytest.raises(PreconditionError):
        WorkloadSpec(kind="spiral")


def test_disjoint_grid_suppresses_nothing():
    samples = microbenchmark(WorkloadSpec(kind="disjoint_grid"), sizes=[16, 64], repeats=3)
    for sample in samples:
        assert sample.trace.output_count == sample.size
        assert sample.trace.iou_ops == sample.size * (sample.size - 1) // 2


def test_microbenchmark_reports_one_sample_per_size():
    sizes = [10, 20, 40]
    samples = microbenchmark(WorkloadSpec(kind="dense"), sizes=sizes, repeats=3)
    assert [s.size for s in samples] == sizes
    assert all(s.median_ns == s.trace.wall_time_total for s in samples)


def test_microbenchmark_preconditions():
    spec = WorkloadSpec()
    with pytest.raises(PreconditionError):
        microbenchmark(spec, sizes=[10], repeats=2)
    with pytest.raises(PreconditionError):
        microbenchmark(spec, sizes=[], repeats=3)
    with pytest.raises(PreconditionError):
        microbenchmark(spec, sizes=[100], repeats=3, memory_guard=50)


def test_csv_layout_feeds_the_latency_fitter():
    samples = microbenchmark(WorkloadSpec(kind="uniform"), sizes=[8, 32], repeats=3)
    frame = samples_to_dataframe(samples)
    assert list(frame.columns[: len(BENCHMARK_COLUMNS)]) == BENCHMARK_COLUMNS
    traces = dataframe_to_traces(frame)
    assert [t.input_count for t in traces] == [8, 32]
    assert [t.iou_ops for t in traces] == [s.trace.iou_ops for s in samples]


def test_csv_missing_columns_is_a_value_error():
    with pytest.raises(ValueError):
        dataframe_to_traces(pd.DataFrame({"size": [1], "median_ns": [10]}))


def test_dense_workload_iou_work_is_quadratic():
    spec = WorkloadSpec(kind="dense")
    sizes = np.array([100, 200, 500, 1000, 2000, 5000, 10000])
    iou_ops = []
    for n in sizes:
        corners, scores = generate_workload(spec, int(n))
        iou_ops.append(nms_arrays(corners, scores, 0.6)[1].iou_ops)
    iou_ops = np.array(iou_ops, dtype=np.float64)
    assert iou_ops[-1] / iou_ops[3] > 10

    coefficients = np.polyfit(sizes, iou_ops, deg=2)
    assert coefficients[0] > 0
    assert r2_score(iou_ops, np.polyval(coefficients, sizes)) >= 0.95


@pytest.mark.slow
def test_dense_workload_time_fits_a_quadratic():
    sizes = np.array([100, 200, 500, 1000, 2000, 5000, 10000])
    samples = microbenchmark(WorkloadSpec(kind="dense"), sizes=sizes.tolist(), repeats=3)
    times = np.array([s.median_ns for s in samples], dtype=np.float64)
    coefficients = np.polyfit(sizes, times, deg=2)
    assert coefficients[0] > 0
    assert r2_score(times, np.polyval(coefficients, sizes)) >= 0.95
