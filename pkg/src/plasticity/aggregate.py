"""Summaries and plot data from a directory of RunLogs."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import UsageError
from .runlog import load_runs
from .stats import (
    ScoreMatrix,
    best_over_variants,
    final_window_mean,
    iqm,
    norm_ratio_report,
    percent_improvement,
    stratified_bootstrap_ci,
)

FINAL_FRACTION = 0.1  # RL score: mean greedy return over the last 10% of eval points
LATE_TASK_FRACTION = 0.25  # continual score: mean end-of-task MSE over the last 25% of tasks


def run_score(kind: str, series) -> float:
    if kind == "rl":
        return final_window_mean(series.values("return"), FINAL_FRACTION)
    mse = series.values("task_mse")
    if not mse:
        raise UsageError(f"run {series.run_id} has no task_mse records")
    n = max(1, int(math.ceil(LATE_TASK_FRACTION * len(mse))))
    return float(np.mean(mse[-n:]))


def _mean_curve(runs, metric):
    by_step = defaultdict(list)
    for s in runs:
        for r in s.rows:
            if r.metric == metric:
                by_step[r.step].append(r.value)
    return {step: float(np.mean(v)) for step, v in sorted(by_step.items())}


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def aggregate(log_dir, out_dir=None, svg: bool = False, n_boot: int = 2000, seed: int = 0) -> dict:
    log_dir = Path(log_dir)
    out_dir = Path(out_dir) if out_dir else log_dir
    runs = load_runs(log_dir)
    if not runs:
        raise UsageError(f"no complete runs in {log_dir}")
    configs = {json.dumps(m["config"], sort_keys=True) for m, _ in runs}
    if len(configs) != 1:
        raise UsageError("runs in one aggregation come from different experiment configs")
    config = runs[0][0]["config"]
    kind = config["kind"]
    declared = [v for v in config[kind]["variants"]]
    by_variant = defaultdict(list)
    for manifest, series in runs:
        by_variant[manifest["variant"]].append(series)
    variants = [v for v in declared if v["name"] in by_variant]
    higher_is_better = kind == "rl"

    summary = {"kind": kind, "preset": config.get("preset"), "higher_is_better": higher_is_better,
               "variants": {}, "improvements": {}, "improvement_table": {}, "groups": {}}
    scores = {}
    for v in variants:
        name = v["name"]
        per_run = [run_score(kind, s) for s in by_variant[name]]
        sm = ScoreMatrix(np.array(per_run)[:, None], [s.run_id for s in by_variant[name]], [kind])
        lo, hi = stratified_bootstrap_ci(sm, n_boot=n_boot, seed=seed)
        scores[name] = iqm(per_run)
        summary["variants"][name] = {
            "n_runs": len(per_run),
            "iqm": scores[name],
            "ci": [lo, hi],
            "ci_degenerate": len(per_run) == 1,
            "run_scores": dict(zip(sm.run_labels, per_run)),
        }

    def improvement(a, b):
        if b == 0:
            return None
        return percent_improvement(a, b) if higher_is_better else percent_improvement(-a, -b)

    for v in variants:
        ref = v.get("compare_to")
        if ref in scores:
            summary["improvements"][v["name"]] = {"baseline": ref, "percent": improvement(scores[v["name"]], scores[ref])}
    for a in scores:
        summary["improvement_table"][a] = {b: improvement(scores[a], scores[b]) for b in scores if b != a}

    if kind == "rl":
        groups = defaultdict(dict)
        for v in variants:
            if v.get("group"):
                for s in by_variant[v["name"]]:
                    groups[v["group"]].setdefault(v["name"], {})[s.run_id.rsplit("__", 1)[1]] = s.values("return")
        for g, members in groups.items():
            seeds = set.intersection(*(set(m) for m in members.values()))
            trimmed = {name: {k: m[k] for k in seeds} for name, m in members.items()}
            summary["groups"][g] = {"members": sorted(members), "best_per_seed": best_over_variants(trimmed, FINAL_FRACTION)}

    norms = {}
    for _, series in runs:
        samples = [(r.step, r.value) for r in series.rows if r.metric == "weight_norm"]
        if samples:
            norms[series.run_id] = samples
    summary["norm_ratios"] = norm_ratio_report(norms) if norms else {}

    out_dir.mkdir(parents=True, exist_ok=True)
    names = [v["name"] for v in variants]
    if kind == "rl":
        curves = {n: _mean_curve(by_variant[n], "return") for n in names}
        steps = sorted({s for c in curves.values() for s in c})
        rows = [[s] + [curves[n].get(s) for n in names] for s in steps]
        _write_csv(out_dir / "curves.csv", ["step"] + names, rows)
    else:
        curves = {n: _mean_curve(by_variant[n], "train_mse") for n in names}
        ctx = {}
        for s in by_variant[names[0]]:
            for r in s.rows:
                if r.metric == "train_mse":
                    ctx.setdefault(r.step, int(r.context[len("task"):]))
        steps = sorted({s for c in curves.values() for s in c})
        rows, prev = [], None
        for s in steps:
            task = ctx.get(s)
            rows.append([s, task, int(task != prev and prev is not None)] + [curves[n].get(s) for n in names])
            prev = task
        _write_csv(out_dir / "curves.csv", ["iteration", "task", "task_boundary"] + names, rows)
        task_curves = {n: [float(np.mean(col)) for col in zip(*(s.values("task_mse") for s in by_variant[n]))] for n in names}
        n_tasks = max(len(c) for c in task_curves.values())
        _write_csv(out_dir / "task_mse.csv", ["task"] + names,
                   [[t] + [c[t] if t < len(c) else None for c in task_curves.values()] for t in range(n_tasks)])
    if summary["norm_ratios"]:
        _write_csv(out_dir / "norm_ratios.csv", ["run_id", "initial", "final", "ratio", "crossed", "crossing_step"],
                   [[rid, r["initial"], r["final"], r["ratio"], int(r["crossed"]), r["crossing_step"]]
                    for rid, r in summary["norm_ratios"].items()])
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    if svg:
        from .plot import line_chart

        xlabel = "env step" if kind == "rl" else "iteration"
        ylabel = "greedy return" if kind == "rl" else "train MSE"
        line_chart(out_dir / "curves.svg", steps, {n: [curves[n].get(s) for s in steps] for n in names},
                   xlabel, ylabel, log_y=kind != "rl")
    return summary
