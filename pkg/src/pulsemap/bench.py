"""Throughput benchmark for the superpixel preprocessing step.

Measures frames/sec for three segmentation strategies on the same frame
sequence:

  * ibis_warm - temporal propagation (each frame warm-starts from the
    previous frame's converged seeds, the intended production path)
  * ibis_cold - seeds re-initialized and fully re-converged every frame
  * grid      - fixed spatial Voronoi of the initial grid, no iteration
                (a lower bound on segmentation work)

Each method runs one untimed warmup pass and at least three timed
repetitions; the median frames/sec is reported together with the label
stability, the fraction of pixels whose label persists frame to frame
(deterministic, measured once).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .superpixel import (
    SegmentationParams,
    init_seeds,
    propagate_and_segment,
    segment_frame,
)

METHODS = ("ibis_warm", "ibis_cold", "grid")


@dataclass
class BenchResult:
    method: str
    fps_median: float
    fps_runs: list[float]
    label_stability: float
    n_frames: int


def _grid_assign(frame_lab: np.ndarray, seeds, height: int, width: int) -> np.ndarray:
    """Spatial-only nearest-seed labeling (fixed blocks, no iteration)."""
    ys, xs = np.divmod(np.arange(height * width, dtype=np.float64), width)
    d = np.hypot(xs[:, None] - seeds.x[None, :], ys[:, None] - seeds.y[None, :])
    return np.argmin(d, axis=1).astype(np.int32).reshape(height, width)


def _run_method(method: str, frames_lab: list[np.ndarray], params: SegmentationParams):
    """Yield one label map per frame for the requested method."""
    if method == "ibis_warm":
        for labels, _seeds in propagate_and_segment(frames_lab, params):
            yield labels
    elif method == "ibis_cold":
        for frame in frames_lab:
            seeds = init_seeds(frame, params.k)
            labels, _seeds = segment_frame(frame, seeds, params)
            yield labels
    elif method == "grid":
        height, width = frames_lab[0].shape[:2]
        for frame in frames_lab:
            seeds = init_seeds(frame, params.k)
            yield _grid_assign(frame, seeds, height, width)
    else:
        raise ValueError(f"unknown method {method!r}")


def run_benchmark(
    frames_lab: list[np.ndarray],
    params: SegmentationParams,
    methods: tuple[str, ...] = METHODS,
    reps: int = 3,
) -> list[BenchResult]:
    if reps < 3:
        raise ValueError("benchmark protocol requires >= 3 repetitions")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r} (choose from {METHODS})")
    n = len(frames_lab)
    results = []
    for method in methods:
        # Warmup pass, untimed; reuse it to measure label stability.
        prev = None
        stable = []
        for labels in _run_method(method, frames_lab, params):
            if prev is not None:
                stable.append(float((labels == prev).mean()))
            prev = labels
        stability = float(np.mean(stable)) if stable else 1.0
        fps_runs = []
        for _ in range(reps):
            t0 = time.perf_counter()
            for _labels in _run_method(method, frames_lab, params):
                pass
            elapsed = time.perf_counter() - t0
            fps_runs.append(n / elapsed)
        results.append(
            BenchResult(
                method=method,
                fps_median=float(np.median(fps_runs)),
                fps_runs=fps_runs,
                label_stability=stability,
                n_frames=n,
            )
        )
    return results
