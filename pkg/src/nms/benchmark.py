"""Seeded NMS workloads and the |C| -> wall-time microbenchmark."""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import PreconditionError
from nms.engine import NmsTrace, nms_arrays
from utils import make_rng

WORKLOAD_KINDS = ("uniform", "dense", "disjoint_grid")
BENCHMARK_COLUMNS = ["size", "median_ns", "iou_ops", "transfer_ops", "while_iterations"]


@dataclass(frozen=True)
class WorkloadSpec:
    """
    How candidate boxes for a benchmark run are drawn.

    uniform: boxes of random size anywhere on a canvas_size^2 canvas.
    dense: the same boxes packed on a 64x64 canvas, as phantom clusters are.
    disjoint_grid: non-touching boxes on a grid, so nothing is suppressed.
    """

    kind: str = "uniform"
    canvas_size: float = 640.0
    min_box_size: float = 2.0
    max_box_size: float = 10.0
    conf_threshold: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise PreconditionError(
                f"Unknown workload kind '{self.kind}'. Must be one of {WORKLOAD_KINDS}"
            )
        if not 0 < self.min_box_size <= self.max_box_size:
            raise PreconditionError("box sizes must satisfy 0 < min <= max")


@dataclass(frozen=True)
class BenchmarkSample:
    size: int
    median_ns: int
    trace: NmsTrace


def generate_workload(spec: WorkloadSpec, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw n corner-form boxes and scores above the workload's conf_threshold.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (n, 4) boxes and (n,) scores.
    """
    rng = make_rng(spec.seed, n)
    scores = rng.uniform(spec.conf_threshold + 1e-6, 1.0, size=n)
    if spec.kind == "disjoint_grid":
        cols = max(1, int(np.ceil(np.sqrt(n))))
        idx = np.arange(n)
        pitch = spec.max_box_size * 2.0
        x1 = (idx % cols) * pitch
        y1 = (idx // cols) * pitch
        size = spec.max_box_size
        corners = np.stack([x1, y1, x1 + size, y1 + size], axis=1)
        return corners, scores

    canvas = spec.canvas_size if spec.kind == "uniform" else 64.0
    w = rng.uniform(spec.min_box_size, spec.max_box_size, size=n)
    h = rng.uniform(spec.min_box_size, spec.max_box_size, size=n)
    x1 = rng.uniform(0.0, np.maximum(canvas - w, 0.0))
    y1 = rng.uniform(0.0, np.maximum(canvas - h, 0.0))
    corners = np.stack([x1, y1, x1 + w, y1 + h], axis=1)
    return corners, scores


def microbenchmark(
    spec: WorkloadSpec,
    sizes: Sequence[int],
    repeats: int,
    iou_threshold: float = 0.6,
    warmup_runs: int = 1,
    memory_guard: int = 1_000_000,
) -> List[BenchmarkSample]:
    """
    Time NMS over workloads of increasing size.

    Runs sequentially in the calling thread; callers must not run other
    benchmarks concurrently in the same process.

    Args:
        spec (WorkloadSpec): workload generator settings.
        sizes (Sequence[int]): candidate counts |C| to measure.
        repeats (int): timed runs per size (>= 3); the median is reported.
        iou_threshold (float): NMS threshold.
        warmup_runs (int): untimed runs per size before measuring.
        memory_guard (int): largest accepted size.

    Returns:
        List[BenchmarkSample]: one sample per size, with the trace of the
            run whose total time is the median.
    """
    if not sizes:
        raise PreconditionError("sizes must be non-empty")
    if repeats < 3:
        raise PreconditionError(f"repeats must be >= 3. Given {repeats}")
    too_large = [s for s in sizes if s > memory_guard]
    if too_large:
        raise PreconditionError(
            f"Sizes {too_large} exceed the memory guard of {memory_guard} boxes"
        )

    samples = []
    for size in sizes:
        corners, scores = generate_workload(spec, int(size))
        for _ in range(warmup_runs):
            nms_arrays(corners, scores, iou_threshold)
        traces = [nms_arrays(corners, scores, iou_threshold)[1] for _ in range(repeats)]
        traces.sort(key=lambda t: t.wall_time_total)
        median_trace = traces[len(traces) // 2]
        samples.append(
            BenchmarkSample(
                size=int(size),
                median_ns=int(median_trace.wall_time_total),
                trace=median_trace,
            )
        )
    return samples


def samples_to_dataframe(samples: Sequence[BenchmarkSample]) -> pd.DataFrame:
    """Benchmark CSV layout: size, median_ns, iou_ops, transfer_ops, while_iterations."""
    rows = [
        {
            "size": s.size,
            "median_ns": s.median_ns,
            "iou_ops": s.trace.iou_ops,
            "transfer_ops": s.trace.transfer_ops,
            "while_iterations": s.trace.while_iterations,
            "wall_time_compute": s.trace.wall_time_compute,
            "wall_time_logic": s.trace.wall_time_logic,
        }
        for s in samples
    ]
    return pd.DataFrame(rows, columns=BENCHMARK_COLUMNS + ["wall_time_compute", "wall_time_logic"])


def dataframe_to_traces(df: pd.DataFrame) -> List[NmsTrace]:
    """Rebuild traces from a benchmark CSV (the latency fitter's input)."""
    missing = [c for c in BENCHMARK_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"Benchmark CSV is missing columns {missing}")
    traces = []
    for row in df.itertuples(index=False):
        compute = int(getattr(row, "wall_time_compute", row.median_ns))
        logic = int(getattr(row, "wall_time_logic", 0))
        traces.append(
            NmsTrace(
                input_count=int(row.size),
                output_count=int(row.while_iterations),
                iou_ops=int(row.iou_ops),
                transfer_ops=int(row.transfer_ops),
                while_iterations=int(row.while_iterations),
                wall_time_compute=compute,
                wall_time_logic=logic,
            )
        )
    return traces
