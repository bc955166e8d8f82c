"""Sequence of drifting-teacher regression tasks trained under several
parameter-handling protocols.

Task ``t`` draws inputs from ``N(t * input_shift_scale * d, I)`` for a fixed
unit direction ``d`` and labels them with a teacher network whose parameters
move by exactly ``drift_scale`` (L2) between tasks.

Defaults were calibrated so that the warm-started learner visibly falls
behind a freshly initialized one within the task budget: a narrow learner,
a large teacher step and a fairly high RMSProp step size. Input shift
defaults to zero because a moving input mean mostly penalizes freshly
initialized learners (poor conditioning) rather than warm ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .injection import InjectionConfig, inject, injection_optimizer_state
from .interventions import reset_last_layers, reset_optimizer_state, shrink_and_perturb
from .nn import InitSpec, RmsPropState, apply_gradients, build_network, mse_loss, weight_norm
from .runlog import MetricSeries

MODES = ("reset_never", "reset_every_task", "inject_at_task", "snp_at_task", "reset_head_at_task")

NEVER = -1


@dataclass
class TeacherProcess:
    widths: list = field(default_factory=lambda: [8, 32, 32, 1])
    drift_scale: float = 10.0
    input_shift_scale: float = 0.0
    seed: int = 0

    def base_teacher(self):
        return build_network(self.widths, init=InitSpec(self.seed))


@dataclass
class RegressionTask:
    inputs: np.ndarray
    targets: np.ndarray
    teacher_params: np.ndarray


@dataclass
class ProtocolConfig:
    mode: str = "reset_never"
    n_tasks: int = 40
    iterations_per_task: int = 1000
    batch_size: int = 64
    n_samples: int = 512
    widths: list = field(default_factory=lambda: [8, 16, 16, 1])
    learning_rate: float = 1e-2
    decay_rho: float = 0.99
    epsilon: float = 1e-8
    intervention_task: int | None = None
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    snp_shrink: float = 0.3
    snp_sigma: float = 0.01
    reset_layers: int = 2
    log_every: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        if self.n_tasks < 1 or self.iterations_per_task < 1 or self.batch_size < 1 or self.n_samples < 1:
            raise ConfigError("n_tasks, iterations_per_task, batch_size, n_samples must be >= 1")
        if self.mode.endswith("_at_task"):
            if self.intervention_task is None:
                self.intervention_task = self.n_tasks // 2
            if not 0 <= self.intervention_task < self.n_tasks:
                raise ConfigError("intervention_task must be < n_tasks", "intervention_task")


def _flat(net) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params().values()])


def _rotate_blocks(blocks, drift_scale, rng):
    """Norm-preserving step: each weight matrix turns on its own sphere by a
    chord proportional to its norm, so the whole step has norm drift_scale."""
    total = np.sqrt(sum(float(w @ w) for w in blocks))
    out = []
    for w in blocks:
        r = np.linalg.norm(w)
        chord = drift_scale * r / total
        if chord > 2 * r:
            raise ConfigError(f"drift_scale {drift_scale} exceeds the teacher diameter", "drift_scale")
        u = rng.standard_normal(w.size)
        u -= (u @ w) / (w @ w) * w
        u /= np.linalg.norm(u)
        angle = 2.0 * np.arcsin(chord / (2.0 * r))
        out.append(np.cos(angle) * w + np.sin(angle) * r * u)
    return out


def generate_task_sequence(tp: TeacherProcess, n_tasks: int, n_samples: int) -> list[RegressionTask]:
    """Teacher weights move on fixed-norm spheres (biases stay zero) so target
    scale is stationary; consecutive teachers are exactly drift_scale apart."""
    if n_tasks < 1 or n_samples < 1:
        raise ConfigError("n_tasks and n_samples must be >= 1")
    teacher = tp.base_teacher()
    rng = np.random.default_rng([tp.seed, 1])
    shift_dir = rng.standard_normal(teacher.input_width)
    shift_dir /= np.linalg.norm(shift_dir)
    keys = [k for k in teacher.params() if k.endswith(".W")]
    tasks = []
    for t in range(n_tasks):
        if t > 0 and tp.drift_scale > 0:
            blocks = [teacher.params()[k].ravel() for k in keys]
            moved = _rotate_blocks(blocks, tp.drift_scale, rng)
            teacher.set_params({k: m.reshape(teacher.params()[k].shape) for k, m in zip(keys, moved)})
        x = rng.standard_normal((n_samples, teacher.input_width)) + t * tp.input_shift_scale * shift_dir
        tasks.append(RegressionTask(x, teacher(x), _flat(teacher)))
    return tasks


def _sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


def run_continual(cfg: ProtocolConfig, tp: TeacherProcess, seed: int = 0, run_id: str = "run",
                  probe_hook=None) -> MetricSeries:
    """Train one learner across the task sequence.

    Logs ``train_mse`` (minibatch, every ``log_every`` iterations, step is
    the global iteration) and ``task_mse`` (full task data at task end).
    ``probe_hook(event, model)`` is called around interventions.
    """
    series = MetricSeries(run_id, seed)
    tasks = generate_task_sequence(tp, cfg.n_tasks, cfg.n_samples)
    rng = np.random.default_rng([seed, 2])

    def fresh(tag):
        return build_network(cfg.widths, init=InitSpec(_sub_seed(seed, 3, tag)))

    def fresh_opt():
        return RmsPropState(cfg.learning_rate, cfg.decay_rho, cfg.epsilon)

    model, opt = fresh(0), fresh_opt()
    series.add(0, "weight_norm", weight_norm(model), "task0")
    step = 0
    try:
        for t, task in enumerate(tasks):
            ctx = f"task{t}"
            if t > 0 and cfg.mode == "reset_every_task":
                model, opt = fresh(t), fresh_opt()
            elif t == cfg.intervention_task and cfg.mode.endswith("_at_task") and (t > 0 or cfg.mode == "inject_at_task"):
                if probe_hook:
                    probe_hook("before", model)
                model, opt = _intervene(cfg, model, opt, _sub_seed(seed, 4, t))
                if probe_hook:
                    probe_hook("after", model)
                series.add(step, "intervention", 1.0, ctx)
            for _ in range(cfg.iterations_per_task):
                idx = rng.integers(0, cfg.n_samples, cfg.batch_size)
                pred, cache = model.forward(task.inputs[idx])
                loss, dpred = mse_loss(pred, task.targets[idx])
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at iteration {step}")
                grads, _ = model.backward(cache, dpred)
                opt = apply_gradients(model, opt, grads)
                if step % cfg.log_every == 0:
                    series.add(step, "train_mse", loss, ctx)
                step += 1
            full_mse, _ = mse_loss(model(task.inputs), task.targets)
            series.add(step, "task_mse", full_mse, ctx)
            series.add(step, "weight_norm", weight_norm(model), ctx)
    except (DivergenceError, FloatingPointError) as exc:
        series.abort(step, "divergence", str(exc))
    return series


def _intervene(cfg, model, opt, seed):
    init = InitSpec(seed)
    if cfg.mode == "inject_at_task":
        new = inject(model, cfg.injection, init)
        return new, injection_optimizer_state(opt, model, new, cfg.injection.optimizer_state_policy)
    if cfg.mode == "snp_at_task":
        new = shrink_and_perturb(model, cfg.snp_shrink, cfg.snp_sigma, seed)
        return new, opt
    new = reset_last_layers(model, cfg.reset_layers, init)
    return new, reset_optimizer_state(opt, model, new)


def end_of_task_mse(series: MetricSeries) -> np.ndarray:
    return np.array([r.value for r in series.rows if r.metric == "task_mse"])


def plasticity_metric(series, mse_threshold: float):
    """Per task, the index of the first logged training MSE at or below
    ``mse_threshold`` (the within-task iteration when ``log_every == 1``);
    ``NEVER`` (-1) if it never gets there.

    ``series`` is a MetricSeries or a list of per-task MSE sequences.
    """
    if mse_threshold <= 0:
        raise ConfigError("threshold must be positive", "mse_threshold")
    if isinstance(series, MetricSeries):
        per_task = {}
        for r in series.rows:
            if r.metric == "train_mse":
                per_task.setdefault(r.context, []).append(r.value)
        curves = list(per_task.values())
    else:
        curves = [list(c) for c in series]
    out = []
    for curve in curves:
        hit = np.flatnonzero(np.asarray(curve) <= mse_threshold)
        out.append(int(hit[0]) if hit.size else NEVER)
    return out
