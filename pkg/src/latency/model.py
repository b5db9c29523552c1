"""NMS latency models: the piecewise flat/quadratic fit, the two-term
compute + transfer model, and the capacity bound that inverts it.

Durations are seconds (float) inside this module; files store integer
nanoseconds.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from errors import BudgetInfeasible, FitDegenerate, PreconditionError
from nms.engine import NmsTrace

NS_PER_S = 1e9
LATENCY_FORMAT_VERSION = 1
# floor for fitted coefficients so that the model stays strictly positive
MIN_COEFFICIENT = 1e-12


@dataclass(frozen=True)
class PiecewiseModel:
    """T = t_base for |C| <= n_t, a * |C|^2 above it."""

    t_base: float
    n_t: int
    a: float
    r2: float = float("nan")
    missing_segment: Optional[str] = None

    def predict(self, count: int) -> float:
        if count <= self.n_t:
            return self.t_base
        return self.a * count * count


@dataclass(frozen=True)
class TwoTermModel:
    """T_nms = alpha |C|^2 / s_iou + beta |C| / b."""

    alpha: float
    beta: float
    s_iou: float
    b: float
    t_backbone: float
    t_base: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "s_iou", "b", "t_backbone"):
            if not getattr(self, name) > 0:
                raise PreconditionError(
                    f"TwoTermModel.{name} must be strictly positive. "
                    f"Given {getattr(self, name)}"
                )

    @property
    def quadratic_coefficient(self) -> float:
        return self.alpha / self.s_iou

    @property
    def linear_coefficient(self) -> float:
        return self.beta / self.b


@dataclass(frozen=True)
class CapacityReport:
    t_budget: float
    c_max: int
    model: TwoTermModel

    @property
    def nms_budget(self) -> float:
        return self.t_budget - self.model.t_backbone

    def as_dict(self) -> dict:
        return {
            "t_budget_ns": int(round(self.t_budget * NS_PER_S)),
            "c_max": self.c_max,
            "nms_budget_ns": int(round(self.nms_budget * NS_PER_S)),
            "model": asdict(self.model),
        }


def fit_piecewise(samples: Sequence[Tuple[int, float]]) -> PiecewiseModel:
    """
    Fit T_base, N_t and a of the flat-then-quadratic model.

    Every observed size is tried as the breakpoint: T_base is the mean time of
    the flat part, `a` the least-squares slope of t against |C|^2 (through the
    origin) on the rest, and the split with the smallest total squared error
    wins. Single-regime fits are reported as FitDegenerate.

    Args:
        samples: (|C|, seconds) pairs; at least 6, spanning a factor of 10.

    Returns:
        PiecewiseModel: fitted model with R^2 of its quadratic segment.
    """
    if len(samples) < 6:
        raise FitDegenerate(
            f"Need at least 6 samples to fit the piecewise model, got {len(samples)}",
            missing="samples",
        )
    counts = np.array([s[0] for s in samples], dtype=np.float64)
    times = np.array([s[1] for s in samples], dtype=np.float64)
    order = np.argsort(counts, kind="stable")
    counts, times = counts[order], times[order]
    if counts.max() < 10 * max(counts.min(), 1.0):
        raise FitDegenerate(
            "Samples must span at least one order of magnitude in |C|",
            missing="samples",
        )

    n = counts.size
    sq = counts**2

    def quad_slope(start: int) -> float:
        denom = float(np.sum(sq[start:] ** 2))
        return float(np.sum(times[start:] * sq[start:]) / denom) if denom > 0 else 0.0

    # k = number of flat samples; k = n is "all flat", k = 0 "all quadratic"
    best_k, best_sse = None, math.inf
    for k in range(0, n + 1):
        if 0 < n - k < 2:
            continue
        sse = 0.0
        if k > 0:
            sse += float(np.sum((times[:k] - times[:k].mean()) ** 2))
        if k < n:
            a = quad_slope(k)
            sse += float(np.sum((times[k:] - a * sq[k:]) ** 2))
        if sse < best_sse:
            best_k, best_sse = k, sse

    if best_k == n:
        partial = PiecewiseModel(
            t_base=float(times.mean()),
            n_t=int(counts[-1]),
            a=MIN_COEFFICIENT,
            missing_segment="quadratic",
        )
        raise FitDegenerate(
            "All samples lie in the flat regime; no quadratic segment to fit",
            partial_model=partial,
            missing="quadratic",
        )
    a = quad_slope(best_k)
    if best_k == 0 or a <= 0:
        partial = PiecewiseModel(
            t_base=0.0,
            n_t=0,
            a=max(a, MIN_COEFFICIENT),
            missing_segment="flat",
        )
        raise FitDegenerate(
            "No flat regime found in the samples",
            partial_model=partial,
            missing="flat",
        )

    predicted = a * sq[best_k:]
    r2 = float(r2_score(times[best_k:], predicted)) if n - best_k >= 2 else float("nan")
    return PiecewiseModel(
        t_base=float(times[:best_k].mean()),
        n_t=int(counts[best_k - 1]),
        a=a,
        r2=r2,
    )


def predict_time(model: TwoTermModel, count: float) -> float:
    """alpha |C|^2 / S_IoU + beta |C| / B, in seconds."""
    if count < 0:
        raise PreconditionError(f"|C| must be non-negative. Given {count}")
    return model.alpha * count * count / model.s_iou + model.beta * count / model.b


def capacity(model: TwoTermModel, t_budget: float) -> CapacityReport:
    """
    Largest candidate count whose predicted NMS time fits the budget.

    Solves (alpha/S_IoU) x^2 + (beta/B) x - (T_budget - T_backbone) = 0 for
    its positive root and floors it; the result is then nudged so that
    predict_time(C_max) <= T_budget - T_backbone < predict_time(C_max + 1)
    holds exactly in floating point.

    Raises:
        BudgetInfeasible: if T_budget <= T_backbone.
    """
    remaining = t_budget - model.t_backbone
    if remaining <= 0:
        raise BudgetInfeasible(
            f"Latency budget {t_budget * 1e3:.3f} ms does not exceed the backbone "
            f"time {model.t_backbone * 1e3:.3f} ms"
        )
    qa = model.quadratic_coefficient
    qb = model.linear_coefficient
    root = (-qb + math.sqrt(qb * qb + 4.0 * qa * remaining)) / (2.0 * qa)
    c_max = max(int(math.floor(root)), 0)
    while c_max > 0 and predict_time(model, c_max) > remaining:
        c_max -= 1
    while predict_time(model, c_max + 1) <= remaining:
        c_max += 1
    return CapacityReport(t_budget=t_budget, c_max=c_max, model=model)


def fps_to_budget(fps: float) -> float:
    """Frame-time budget in seconds, e.g. 30 FPS -> 33.3 ms."""
    if fps <= 0:
        raise PreconditionError(f"fps must be positive. Given {fps}")
    return 1.0 / fps


def calibrate(
    traces: Sequence[NmsTrace],
    t_backbone: float,
    total_times_ns: Optional[Sequence[int]] = None,
    fit_intercept: bool = False,
) -> TwoTermModel:
    """
    Calibrate the two-term model from NMS traces.

    S_IoU and B are the measured unit rates (iou_ops per compute second and
    transfer_ops per logic second, pooled over all traces). The total times
    are then regressed on (|C|^2, |C|) with non-negative coefficients and
    alpha, beta recovered as coefficient x rate.

    Args:
        traces: traces covering at least 5 distinct sizes.
        t_backbone: detector forward time in seconds.
        total_times_ns: measured end-to-end NMS times; defaults to each
            trace's compute + logic time.
        fit_intercept: also fit a constant term (reported as t_base).

    Returns:
        TwoTermModel: the calibrated model.
    """
    if not traces:
        raise FitDegenerate("No traces to calibrate from", missing="samples")
    counts = np.array([t.input_count for t in traces], dtype=np.float64)
    if np.unique(counts).size < 5:
        raise FitDegenerate(
            f"Calibration needs at least 5 distinct sizes, got {np.unique(counts).size}",
            missing="sizes",
        )
    if total_times_ns is None:
        total_times_ns = [t.wall_time_total for t in traces]
    totals = np.asarray(total_times_ns, dtype=np.float64) / NS_PER_S

    compute_s = sum(t.wall_time_compute for t in traces) / NS_PER_S
    logic_s = sum(t.wall_time_logic for t in traces) / NS_PER_S
    iou_ops = sum(t.iou_ops for t in traces)
    transfer_ops = sum(t.transfer_ops for t in traces)
    if compute_s <= 0 or logic_s <= 0 or iou_ops <= 0 or transfer_ops <= 0:
        raise FitDegenerate(
            "Traces carry no compute or logic work to derive unit rates from",
            missing="rates",
        )
    s_iou = iou_ops / compute_s
    bandwidth = transfer_ops / logic_s

    design = np.stack([counts**2, counts], axis=1)
    scale = design.max(axis=0)
    scale[scale == 0] = 1.0
    regression = LinearRegression(positive=True, fit_intercept=fit_intercept)
    regression.fit(design / scale, totals)
    quad, lin = regression.coef_ / scale
    intercept = float(regression.intercept_) if fit_intercept else 0.0

    return TwoTermModel(
        alpha=max(float(quad) * s_iou, MIN_COEFFICIENT),
        beta=max(float(lin) * bandwidth, MIN_COEFFICIENT),
        s_iou=float(s_iou),
        b=float(bandwidth),
        t_backbone=float(t_backbone),
        t_base=max(intercept, 0.0),
    )


@dataclass(frozen=True)
class LatencyModel:
    """Everything fit-latency produces: both fits plus the backbone time."""

    piecewise: Optional[PiecewiseModel]
    two_term: TwoTermModel

    def to_record(self) -> dict:
        piecewise = self.piecewise
        return {
            "t_base_ns": int(round(piecewise.t_base * NS_PER_S)) if piecewise else None,
            "n_t": piecewise.n_t if piecewise else None,
            "a": piecewise.a if piecewise else None,
            "r2": piecewise.r2 if piecewise and not math.isnan(piecewise.r2) else None,
            "alpha": self.two_term.alpha,
            "beta": self.two_term.beta,
            "s_iou": self.two_term.s_iou,
            "b": self.two_term.b,
            "t_backbone_ns": int(round(self.two_term.t_backbone * NS_PER_S)),
            "intercept_ns": int(round(self.two_term.t_base * NS_PER_S)),
        }

    @classmethod
    def from_record(cls, record: dict) -> "LatencyModel":
        piecewise = None
        if record.get("a") is not None and record.get("t_base_ns") is not None:
            r2 = record.get("r2")
            piecewise = PiecewiseModel(
                t_base=record["t_base_ns"] / NS_PER_S,
                n_t=int(record["n_t"]),
                a=float(record["a"]),
                r2=float("nan") if r2 is None else float(r2),
            )
        two_term = TwoTermModel(
            alpha=float(record["alpha"]),
            beta=float(record["beta"]),
            s_iou=float(record["s_iou"]),
            b=float(record["b"]),
            t_backbone=record["t_backbone_ns"] / NS_PER_S,
            t_base=record.get("intercept_ns", 0) / NS_PER_S,
        )
        return cls(piecewise=piecewise, two_term=two_term)

    def with_backbone(self, t_backbone: float) -> "LatencyModel":
        return replace(self, two_term=replace(self.two_term, t_backbone=t_backbone))


def samples_from_benchmark(rows: List[Tuple[int, int]]) -> List[Tuple[int, float]]:
    """(size, median_ns) rows -> (size, seconds) samples for fit_piecewise."""
    return [(int(size), ns / NS_PER_S) for size, ns in rows]


def load_latency_model(file_path: str) -> LatencyModel:
    """
    Read a latency model written by fit-latency.

    Raises:
        FileNotFoundError: if the file does not exist.
        ValueError: if the file has another format_version.
    """
    if not os.path.isfile(file_path):
        raise FileNotFoundError(
            f"Latency model not found: '{file_path}'. Run fit-latency first "
            f"(expected format_version {LATENCY_FORMAT_VERSION})."
        )
    with open(file_path, "r", encoding="utf-8") as file:
        record = json.load(file)
    if record.get("format_version") != LATENCY_FORMAT_VERSION:
        raise ValueError(
            f"'{file_path}' has format_version {record.get('format_version')}; "
            f"expected {LATENCY_FORMAT_VERSION}"
        )
    return LatencyModel.from_record(record)
