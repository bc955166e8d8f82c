"""Aggregate statistics: IQM, stratified bootstrap intervals, improvements,
best-over-variants and weight-norm ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError


def iqm_weights(n: int) -> np.ndarray:
    """Weights over sorted samples for the 25% trimmed mean.

    Sample ``i`` owns the quantile slab ``[i/n, (i+1)/n]``; its weight is the
    overlap with ``[0.25, 0.75]``, normalized to sum to one.
    """
    if n < 1:
        raise UsageError("iqm of an empty sample")
    edges = np.arange(n + 1) / n
    overlap = np.clip(np.minimum(edges[1:], 0.75) - np.maximum(edges[:-1], 0.25), 0.0, None)
    return overlap / overlap.sum()


def iqm(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise UsageError("iqm of an empty sample")
    return float(np.sort(xs) @ iqm_weights(xs.size))


@dataclass
class ScoreMatrix:
    values: np.ndarray
    run_labels: list | None = None
    task_labels: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.size == 0:
            raise UsageError("score matrix must be a non-empty [runs x tasks] array")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("score matrix has non-finite entries")


def stratified_bootstrap_ci(sm: ScoreMatrix, statistic=None, n_boot: int = 2000, alpha: float = 0.05, seed: int = 0):
    """Percentile interval; runs are resampled with replacement within each
    task. ``statistic`` maps an ``[n_boot, runs, tasks]`` array to
    ``[n_boot]``; default is IQM over all run x task scores.

    A single run per task cannot be resampled, so the interval degenerates
    to the point estimate.
    """
    if n_boot < 100:
        raise UsageError("n_boot must be >= 100")
    values = sm.values
    n_runs, n_tasks = values.shape
    if statistic is None:
        weights = iqm_weights(n_runs * n_tasks)

        def statistic(samples):
            flat = samples.reshape(samples.shape[0], -1)
            return np.sort(flat, axis=1) @ weights

    point = float(statistic(values[None])[0])
    if n_runs == 1:
        return point, point
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_runs, size=(n_boot, n_runs, n_tasks))
    samples = np.take_along_axis(np.broadcast_to(values, (n_boot, n_runs, n_tasks)), idx, axis=1)
    stats = statistic(samples)
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def percent_improvement(a: float, b: float) -> float:
    if b == 0:
        raise UsageError("percent improvement over a zero baseline is undefined")
    return 100.0 * (a - b) / abs(b)


def final_window_mean(series, fraction: float = 0.1) -> float:
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise UsageError("empty score series")
    n = max(1, int(math.ceil(fraction * series.size)))
    return float(series[-n:].mean())


def best_over_variants(series_by_variant: dict, fraction: float = 0.1) -> dict:
    """``{variant: {task: score series}}`` -> ``{task: best final-window mean}``."""
    if not series_by_variant:
        raise UsageError("need at least one variant")
    task_sets = {frozenset(v) for v in series_by_variant.values()}
    if len(task_sets) != 1:
        raise UsageError("variants cover different task sets")
    tasks = next(iter(series_by_variant.values())).keys()
    return {
        t: max(final_window_mean(v[t], fraction) for v in series_by_variant.values())
        for t in tasks
    }


def norm_ratio_report(norms_by_run: dict, factor: float = 3.0) -> dict:
    """``{run_id: [(step, norm), ...]}`` -> ratio of final to initial norm and
    the first step where the norm exceeds ``factor`` times the initial one."""
    report = {}
    for run_id, samples in norms_by_run.items():
        samples = sorted(samples)
        if not samples or samples[0][0] != 0:
            raise UsageError(f"run {run_id}: missing weight_norm record at step 0")
        w0 = samples[0][1]
        crossing = next((s for s, w in samples if w > factor * w0), None)
        report[run_id] = {
            "initial": w0,
            "final": samples[-1][1],
            "final_step": samples[-1][0],
            "ratio": samples[-1][1] / w0,
            "crossed": crossing is not None,
            "crossing_step": crossing,
        }
    return report
