import json

import numpy as np
import pytest

from errors import BudgetInfeasible, FitDegenerate
from latency.model import (
    LATENCY_FORMAT_VERSION,
    LatencyModel,
    PiecewiseModel,
    TwoTermModel,
    calibrate,
    capacity,
    fit_piecewise,
    fps_to_budget,
    load_latency_model,
    predict_time,
)
from nms.benchmark import WorkloadSpec, microbenchmark
from nms.engine import NmsTrace

SIZES = [10, 20, 50, 100, 200, 500, 1000, 2000]


def synthetic_trace(n, s_iou=1e9, bandwidth=1e7):
    """Trace of an all-kept run where every op costs exactly its unit rate."""
    iou_ops = n * (n - 1) // 2
    return NmsTrace(
        input_count=n,
        output_count=n,
        iou_ops=iou_ops,
        transfer_ops=n,
        while_iterations=n,
        wall_time_compute=int(round(iou_ops / s_iou * 1e9)),
        wall_time_logic=int(round(n / bandwidth * 1e9)),
    )


def test_capacity_closed_form(two_term_model):
    report = capacity(two_term_model, t_budget=0.011)
    # x^2 / 1e9 + 2x / 1e7 = 1e-3  ->  x = 904.99
    assert report.c_max == 904
    assert report.nms_budget == pytest.approx(0.001)


@pytest.mark.parametrize("t_budget", [0.0100001, 0.0101, 0.011, 0.0333, 0.05, 1.0])
def test_capacity_brackets_the_budget(two_term_model, t_budget):
    c_max = capacity(two_term_model, t_budget).c_max
    remaining = t_budget - two_term_model.t_backbone
    assert predict_time(two_term_model, c_max) <= remaining
    assert predict_time(two_term_model, c_max + 1) > remaining


def test_capacity_grows_with_budget(two_term_model):
    values = [capacity(two_term_model, 0.010 + k * 1e-3).c_max for k in range(1, 20)]
    assert values == sorted(values)


@pytest.mark.parametrize("t_budget", [0.005, 0.010])
def test_budget_at_or_below_backbone_is_infeasible(two_term_model, t_budget):
    with pytest.raises(BudgetInfeasible):
        capacity(two_term_model, t_budget)


def test_fps_to_budget():
    assert fps_to_budget(30) == pytest.approx(1 / 30)
    with pytest.raises(ValueError):
        fps_to_budget(0)


def test_two_term_model_requires_positive_parameters():
    with pytest.raises(ValueError):
        TwoTermModel(alpha=0.0, beta=1.0, s_iou=1.0, b=1.0, t_backbone=0.01)


def test_piecewise_fit_recovers_flat_and_quadratic_segments():
    t_base, a = 1e-4, 2e-8
    samples = [(n, t_base if n <= 100 else a * n * n) for n in SIZES]
    model = fit_piecewise(samples)
    assert model.n_t == 100
    assert model.t_base == pytest.approx(t_base)
    assert model.a == pytest.approx(a, rel=1e-6)
    assert model.r2 == pytest.approx(1.0)
    assert model.predict(50) == pytest.approx(t_base)
    assert model.predict(1000) == pytest.approx(a * 1e6, rel=1e-6)


def test_piecewise_fit_needs_enough_samples():
    with pytest.raises(FitDegenerate):
        fit_piecewise([(n, 1e-4) for n in SIZES[:5]])


def test_piecewise_fit_needs_an_order_of_magnitude():
    with pytest.raises(FitDegenerate):
        fit_piecewise([(n, 1e-4) for n in (100, 120, 140, 160, 180, 200)])


def test_flat_only_samples_report_the_missing_segment():
    with pytest.raises(FitDegenerate) as info:
        fit_piecewise([(n, 1e-4) for n in SIZES])
    assert info.value.missing == "quadratic"
    assert isinstance(info.value.partial_model, PiecewiseModel)
    assert info.value.partial_model.t_base == pytest.approx(1e-4)


def test_calibration_recovers_unit_rates_and_weights():
    traces = [synthetic_trace(n) for n in SIZES]
    model = calibrate(traces, t_backbone=0.02)
    assert model.s_iou == pytest.approx(1e9, rel=1e-6)
    assert model.b == pytest.approx(1e7, rel=1e-6)
    # total = n^2 / (2 S) + n (1 / B - 1 / (2 S))
    assert model.alpha == pytest.approx(0.5, rel=1e-3)
    assert model.beta == pytest.approx(1.0 - 1e7 / 2e9, rel=1e-3)
    for trace in traces:
        predicted = predict_time(model, trace.input_count)
        assert predicted == pytest.approx(trace.wall_time_total / 1e9, rel=1e-2)


def test_calibration_needs_five_distinct_sizes():
    with pytest.raises(FitDegenerate):
        calibrate([synthetic_trace(n) for n in (10, 20, 50, 100, 100, 100)], 0.01)


def test_latency_model_file_round_trip(tmp_path, two_term_model):
    piecewise = PiecewiseModel(t_base=1e-4, n_t=100, a=2e-8, r2=0.99)
    record = LatencyModel(piecewise=piecewise, two_term=two_term_model).to_record()
    record["format_version"] = LATENCY_FORMAT_VERSION
    file_path = tmp_path / "latency_model.json"
    file_path.write_text(json.dumps(record))

    loaded = load_latency_model(str(file_path))
    assert loaded.two_term.alpha == two_term_model.alpha
    assert loaded.two_term.t_backbone == pytest.approx(two_term_model.t_backbone)
    assert loaded.piecewise.n_t == 100
    assert capacity(loaded.two_term, 0.011).c_max == 904


def test_loading_latency_model_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_latency_model(str(tmp_path / "missing.json"))
    stale = tmp_path / "stale.json"
    stale.write_text(json.dumps({"format_version": 0}))
    with pytest.raises(ValueError):
        load_latency_model(str(stale))


def test_piecewise_fit_tolerates_one_percent_noise(rng):
    t_base, n_t, a = 1e-3, 500, 4e-9
    sizes = [50, 100, 200, 300, 400, 500, 700, 1000, 2000, 5000, 10000]
    samples = [
        (n, (t_base if n <= n_t else a * n * n) * (1.0 + 0.01 * rng.standard_normal()))
        for n in sizes
    ]
    model = fit_piecewise(samples)
    assert model.a == pytest.approx(a, rel=0.1)
    assert abs(model.n_t - n_t) <= 0.2 * n_t
    assert model.t_base == pytest.approx(t_base, rel=0.05)


def test_capacity_matches_an_exhaustive_scan(rng):
    scan = np.arange(0, 100_002, dtype=np.float64)
    for _ in range(100):
        model = TwoTermModel(
            alpha=float(rng.uniform(0.1, 10.0)),
            beta=float(rng.uniform(0.1, 10.0)),
            s_iou=float(10 ** rng.uniform(8.0, 10.0)),
            b=float(10 ** rng.uniform(6.0, 8.0)),
            t_backbone=0.01,
        )
        remaining = float(rng.uniform(1e-4, 5e-2))
        times = model.alpha * scan * scan / model.s_iou + model.beta * scan / model.b
        expected = int(np.flatnonzero(times <= remaining).max())
        assert expected < scan.size - 1
        assert capacity(model, model.t_backbone + remaining).c_max == expected


def test_calibration_on_measured_traces_is_non_negative():
    samples = microbenchmark(
        WorkloadSpec(kind="dense"), sizes=[50, 100, 200, 500, 1000, 2000], repeats=3
    )
    traces = [s.trace for s in samples]
    for fit_intercept in (False, True):
        model = calibrate(traces, t_backbone=0.01, fit_intercept=fit_intercept)
        assert model.alpha >= 0 and model.beta >= 0
        assert model.s_iou > 0 and model.b > 0
        assert model.t_base >= 0
        assert predict_time(model, 2000) > 0
