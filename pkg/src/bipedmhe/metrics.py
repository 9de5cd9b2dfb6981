"""Accuracy, runtime, and constraint metrics for estimate traces.

All error metrics are nearest-sample joins of an estimate trace against the
recorded simulation truth; GRF errors are scored per foot over its stance
samples only, matching the per-foot reporting convention of the benchmark
tables.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EstimatorMetrics:
    """One benchmark row: error, runtime, and violation statistics."""

    name: str
    rmse_v: float = math.nan
    rmse_vx: float = math.nan
    rmse_vz: float = math.nan
    rmse_f: float = math.nan
    rmse_fx: float = math.nan
    rmse_fz: float = math.nan
    solve_mean_ms: float = math.nan
    solve_p99_ms: float = math.nan
    violations: int = 0
    fault: str = ""

    def __post_init__(self):
        if self.fault:
            return
        for label in ("rmse_v", "rmse_vx", "rmse_vz", "rmse_f", "rmse_fx",
                      "rmse_fz"):
            value = getattr(self, label)
            if not (value >= 0.0):
                raise ValueError(f"{label} must be nonnegative, got {value}")


@dataclass
class MetricsReport:
    """Benchmark output: one metrics row per estimator."""

    rows: list = field(default_factory=list)
    duration: float = 0.0
    seed: int = 0

    def row(self, name: str) -> EstimatorMetrics:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    @property
    def names(self):
        return [row.name for row in self.rows]


def nearest_join(times, ref_times, max_skew):
    """Indices of the nearest reference sample per query time.

    Returns (idx, ok); queries farther than max_skew from any reference
    sample are marked not ok.
    """
    times = np.asarray(times, dtype=float)
    ref_times = np.asarray(ref_times, dtype=float)
    i = np.searchsorted(ref_times, times)
    left = np.clip(i - 1, 0, ref_times.size - 1)
    right = np.clip(i, 0, ref_times.size - 1)
    pick_right = (np.abs(ref_times[right] - times)
                  < np.abs(ref_times[left] - times))
    idx = np.where(pick_right, right, left)
    ok = np.abs(ref_times[idx] - times) <= max_skew
    return idx, ok


def compute_rmse(times, values, ref_times, ref_values, t_min=0.0,
                 mask=None, max_skew=None):
    """RMS of the Euclidean error between two timed series.

    The estimate series is joined to the reference by nearest sample
    (maximum skew: half the estimate tick by default); an optional mask
    further restricts the evaluated samples.  Raises if nothing overlaps.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ref_values = np.asarray(ref_values, dtype=float)
    if ref_values.ndim == 1:
        ref_values = ref_values[:, None]
    if max_skew is None:
        if times.size < 2:
            raise ValueError("need at least two samples to infer the tick")
        max_skew = 0.5 * float(np.median(np.diff(times)))
    idx, ok = nearest_join(times, ref_times, max_skew)
    keep = ok & (times >= t_min)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ValueError("no overlapping samples to score")
    err = values[keep] - ref_values[idx[keep]]
    return float(np.sqrt((err ** 2).sum(axis=1).mean()))


def velocity_rmse(estimate, log, t_min=0.0, axis=None):
    """Base-velocity RMSE against simulation truth (axis 0=x, 1=z)."""
    truth = log.truth_qd[:, 0:2]
    if axis is None:
        values, ref = estimate.velocity, truth
    else:
        values, ref = estimate.velocity[:, axis], truth[:, axis]
    return compute_rmse(estimate.t, values, log.truth_t, ref, t_min=t_min)


def grf_rmse(estimate, log, foot=None, axis=None, t_min=0.0):
    """Stance-only GRF RMSE against simulation truth.

    Pools all feet unless one is named; stance samples are taken from the
    recorded truth contact flags.
    """
    feet = list(log.foot_names)
    picks = [feet.index(foot)] if foot is not None else range(len(feet))
    max_skew = 0.5 * float(np.median(np.diff(estimate.t)))
    idx, ok = nearest_join(estimate.t, log.truth_t, max_skew)
    total, count = 0.0, 0
    for j in picks:
        keep = ok & (estimate.t >= t_min) & log.truth_flags[idx, j]
        if not keep.any():
            continue
        err = estimate.forces[keep, j] - log.truth_grf[idx[keep], j]
        if axis is not None:
            err = err[:, axis:axis + 1]
        total += (err ** 2).sum(axis=1).sum()
        count += keep.sum()
    if count == 0:
        raise ValueError("no stance samples to score")
    return float(np.sqrt(total / count))


def count_violations(estimate, log, tol=1e-6):
    """Ticks with a negative normal force or a nonzero swing-foot force."""
    k = estimate.t.size
    flags = log.contact_flags[:k]
    negative = (estimate.forces[:, :, 1] < -tol).any(axis=1)
    swing = (np.abs(estimate.forces) > tol).any(axis=2) & ~flags
    return int((negative | swing.any(axis=1)).sum())


def evaluate_estimator(name, estimate, log, t_min=0.5) -> EstimatorMetrics:
    """Score one estimate trace against the truth embedded in the log."""
    solve_ms = estimate.solve_time * 1e3
    return EstimatorMetrics(
        name=name,
        rmse_v=velocity_rmse(estimate, log, t_min),
        rmse_vx=velocity_rmse(estimate, log, t_min, axis=0),
        rmse_vz=velocity_rmse(estimate, log, t_min, axis=1),
        rmse_f=grf_rmse(estimate, log, t_min=t_min),
        rmse_fx=grf_rmse(estimate, log, axis=0, t_min=t_min),
        rmse_fz=grf_rmse(estimate, log, axis=1, t_min=t_min),
        solve_mean_ms=float(solve_ms.mean()),
        solve_p99_ms=float(np.percentile(solve_ms, 99)),
        violations=count_violations(estimate, log))
