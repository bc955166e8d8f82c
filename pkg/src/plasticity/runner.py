"""Execute an ExperimentConfig: one RunLog per (variant, seed)."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, continual, rl
from .config import ExperimentConfig, from_dict
from .errors import PlasticityError
from .runlog import MetricSeries, write_run

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PLASTICITY_OUTPUT_ROOT"

EXIT_OK, EXIT_CONFIG, EXIT_RUN_FAILURE = 0, 1, 2


def output_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def run_id(variant: str, seed: int) -> str:
    return f"{variant}__s{seed}"


def execute_one(cfg: ExperimentConfig, variant_name: str, seed: int) -> MetricSeries:
    rid = run_id(variant_name, seed)
    variant = next(v for v in cfg.variants() if v.name == variant_name)
    if cfg.kind == "continual":
        teacher = cfg.continual.teacher
        tp = continual.TeacherProcess(list(teacher.widths), teacher.drift_scale, teacher.input_shift_scale, seed)
        return continual.run_continual(variant.build(), tp, seed, rid)
    section = cfg.rl
    return rl.run_rl_experiment(
        variant.agent.build(), variant.env.build(), variant.build_schedule(),
        budget_steps=section.budget_steps, eval_every=section.eval_every, seed=seed, run_id=rid,
        eval_episodes=section.eval_episodes,
    )


def _job(args):
    cfg_dict, variant_name, seed, out_dir = args
    cfg = from_dict(cfg_dict)
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "kind": cfg.kind,
        "preset": cfg.preset,
        "variant": variant_name,
        "version": __version__,
    }
    try:
        series = execute_one(cfg, variant_name, seed)
    except (PlasticityError, OSError) as exc:
        series = MetricSeries(run_id(variant_name, seed), seed)
        series.abort(0, type(exc).__name__, str(exc))
    write_run(out_dir, series, manifest)
    return series.run_id, series.aborted


def run(cfg: ExperimentConfig, jobs: int = 1) -> int:
    """Run every (variant, seed); returns the process exit status."""
    if cfg.kind == "aggregate":
        from .aggregate import aggregate

        aggregate(cfg.aggregate.log_dir, svg=cfg.aggregate.svg)
        return EXIT_OK
    out_dir = output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "experiment.json").write_text(cfg.dump(), encoding="utf-8", newline="\n")
    cfg_dict = cfg.model_dump(mode="json")
    work = [(cfg_dict, v.name, seed, str(out_dir)) for v in cfg.variants() for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_job, work))
    else:
        results = [_job(w) for w in work]
    failed = [(rid, why) for rid, why in results if why]
    for rid, why in failed:
        log.error("run %s aborted: %s", rid, why)
    return EXIT_RUN_FAILURE if failed else EXIT_OK
