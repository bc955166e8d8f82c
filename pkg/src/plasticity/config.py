"""Experiment configuration: schema, validation, conversion and presets."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import continual, rl
from .errors import ConfigError
from .injection import InjectionConfig
from .interventions import SNP_LAMBDAS, SNP_SIGMAS, InterventionSpec, scale_hidden_widths


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class InjectionModel(Strict):
    split_k: Optional[int] = Field(None, ge=0)
    variant: Literal["shared_encoder", "whole_net", "whole_net_copy_encoder"] = "shared_encoder"
    freeze_old: bool = True
    output_correction: bool = True
    optimizer_state_policy: Literal["fresh", "copy_from_old_head"] = "fresh"

    def build(self, default_k: int) -> InjectionConfig:
        k = default_k if self.split_k is None else self.split_k
        return InjectionConfig(k, self.variant, self.freeze_old, self.output_correction, self.optimizer_state_policy)


class TeacherModel(Strict):
    widths: list[int] = Field(default_factory=lambda: [8, 32, 32, 1], min_length=2)
    drift_scale: float = Field(10.0, ge=0)
    input_shift_scale: float = Field(0.0, ge=0)


class ContinualVariant(Strict):
    name: str
    compare_to: Optional[str] = None
    group: Optional[str] = None
    mode: Literal["reset_never", "reset_every_task", "inject_at_task", "snp_at_task", "reset_head_at_task"] = "reset_never"
    n_tasks: int = Field(40, ge=1)
    iterations_per_task: int = Field(1000, ge=1)
    batch_size: int = Field(64, ge=1)
    n_samples: int = Field(512, ge=1)
    widths: list[int] = Field(default_factory=lambda: [8, 16, 16, 1], min_length=2)
    learning_rate: float = Field(1e-2, ge=0)
    decay_rho: float = Field(0.99, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    intervention_task: Optional[int] = Field(None, ge=0)
    injection: InjectionModel = Field(default_factory=InjectionModel)
    snp_shrink: float = Field(0.3, ge=0, le=1)
    snp_sigma: float = Field(0.01, ge=0)
    reset_layers: int = Field(2, ge=0)
    log_every: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.intervention_task is not None and self.intervention_task >= self.n_tasks:
            raise ValueError("intervention_task must be < n_tasks")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        k = self.injection.split_k
        if k is not None and k >= len(self.widths) - 1:
            raise ValueError(f"injection.split_k={k} must be < depth {len(self.widths) - 1}")
        if self.reset_layers > len(self.widths) - 1:
            raise ValueError(f"reset_layers={self.reset_layers} exceeds depth {len(self.widths) - 1}")
        return self

    def build(self) -> continual.ProtocolConfig:
        return continual.ProtocolConfig(
            mode=self.mode, n_tasks=self.n_tasks, iterations_per_task=self.iterations_per_task,
            batch_size=self.batch_size, n_samples=self.n_samples, widths=list(self.widths),
            learning_rate=self.learning_rate, decay_rho=self.decay_rho, epsilon=self.epsilon,
            intervention_task=self.intervention_task, injection=self.injection.build(len(self.widths) - 3),
            snp_shrink=self.snp_shrink, snp_sigma=self.snp_sigma, reset_layers=self.reset_layers,
            log_every=self.log_every,
        )


class ContinualSection(Strict):
    teacher: TeacherModel = Field(default_factory=TeacherModel)
    variants: list[ContinualVariant] = Field(min_length=1)


class AgentModel(Strict):
    widths: list[int] = Field(default_factory=lambda: [50, 64, 64, 3], min_length=3)
    split_k: Optional[int] = Field(None, ge=0)
    gamma: float = Field(0.99, ge=0, lt=1)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    epsilon_decay_steps: Optional[int] = Field(None, ge=1)
    target_update_period: int = Field(200, ge=1)
    replay_ratio: float = Field(1.0, gt=0)
    batch_size: int = Field(32, ge=1)
    buffer_capacity: int = Field(10_000, ge=1)
    learning_starts: int = Field(500, ge=0)
    learning_rate: float = Field(1e-3, ge=0)
    decay_rho: float = Field(0.99, ge=0, lt=1)
    epsilon_rms: float = Field(1e-8, gt=0)
    loss: Literal["mse", "huber"] = "mse"
    huber_delta: float = Field(1.0, gt=0)
    l2: float = Field(0.0, ge=0)
    spectral_norm: bool = False

    def build(self) -> rl.AgentConfig:
        return rl.AgentConfig(**self.model_dump())


class EnvModel(Strict):
    rows: int = Field(10, ge=2)
    cols: int = Field(5, ge=1)
    switch_step: Optional[int] = Field(None, ge=0)
    switch_kind: Literal["none", "mirror_observation", "permute_actions"] = "none"

    def build(self) -> rl.EnvConfig:
        return rl.EnvConfig(**self.model_dump())


class InterventionModel(Strict):
    kind: Literal["reset", "snp", "widen", "inject"]
    apply_steps: list[int] = Field(default_factory=list)
    n_layers: int = Field(1, ge=0)
    shrink: float = Field(1.0, ge=0, le=1)
    sigma: float = Field(0.01, ge=0)
    zero_new_outgoing: bool = False
    injection: InjectionModel = Field(default_factory=InjectionModel)
    adaptive_factor: Optional[float] = Field(None, gt=0)

    @field_validator("apply_steps")
    @classmethod
    def _increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])) or any(s < 0 for s in v):
            raise ValueError("apply_steps must be non-negative and strictly increasing")
        return v

    @model_validator(mode="after")
    def _adaptive(self):
        if self.adaptive_factor is not None and self.kind != "inject":
            raise ValueError("adaptive_factor only applies to kind=inject")
        if self.adaptive_factor is None and not self.apply_steps:
            raise ValueError("need apply_steps (or adaptive_factor for inject)")
        return self

    def build(self, default_k: int) -> InterventionSpec:
        return InterventionSpec(
            kind=self.kind, apply_steps=list(self.apply_steps), n_layers=self.n_layers, shrink=self.shrink,
            sigma=self.sigma, zero_new_outgoing=self.zero_new_outgoing,
            injection=self.injection.build(default_k) if self.kind == "inject" else None,
            adaptive_factor=self.adaptive_factor,
        )


class RlVariant(Strict):
    name: str
    compare_to: Optional[str] = None
    group: Optional[str] = None
    agent: AgentModel = Field(default_factory=AgentModel)
    env: EnvModel = Field(default_factory=EnvModel)
    schedule: list[InterventionModel] = Field(default_factory=list)

    @model_validator(mode="after")
    def _split(self):
        depth = len(self.agent.widths) - 1
        for m in self.schedule:
            k = m.injection.split_k
            if m.kind == "inject" and k is not None and k >= depth:
                raise ValueError(f"injection.split_k={k} must be < depth {depth}")
            if m.kind == "reset" and m.n_layers > depth:
                raise ValueError(f"reset n_layers={m.n_layers} exceeds depth {depth}")
        return self

    def build_schedule(self) -> list[InterventionSpec]:
        k = self.agent.split_k if self.agent.split_k is not None else max(0, len(self.agent.widths) - 3)
        return [m.build(k) for m in self.schedule]


class RlSection(Strict):
    budget_steps: int = Field(10_000, ge=1)
    eval_every: int = Field(1000, ge=1)
    eval_episodes: int = Field(100, ge=1)
    variants: list[RlVariant] = Field(min_length=1)


class AggregateSection(Strict):
    log_dir: str
    svg: bool = False


class ExperimentConfig(Strict):
    kind: Literal["continual", "rl", "aggregate"]
    preset: Optional[str] = None
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    continual: Optional[ContinualSection] = None
    rl: Optional[RlSection] = None
    aggregate: Optional[AggregateSection] = None

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("need at least one seed")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        if any(s < 0 or s >= 2**64 for s in v):
            raise ValueError("seeds must be unsigned 64-bit integers")
        return v

    @model_validator(mode="after")
    def _sections(self):
        section = getattr(self, self.kind)
        if section is None:
            raise ValueError(f"kind={self.kind} requires a '{self.kind}' section")
        variants = getattr(section, "variants", [])
        names = [v.name for v in variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")
        for v in variants:
            if v.compare_to is not None and v.compare_to not in names:
                raise ValueError(f"variant {v.name!r} compares to unknown variant {v.compare_to!r}")
            if "__" in v.name or "/" in v.name:
                raise ValueError(f"variant name {v.name!r} may not contain '__' or '/'")
        return self

    def variants(self):
        section = getattr(self, self.kind)
        return getattr(section, "variants", [])

    def dump(self) -> str:
        """Canonical JSON (sorted keys, defaults filled)."""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _error_path(err) -> str:
    return ".".join(str(p) for p in err["loc"])


def from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        raise ConfigError(msg, _error_path(err) or "<root>") from None
    # run the dataclass validators too so every error surfaces before any run
    for i, v in enumerate(cfg.variants()):
        try:
            if isinstance(v, ContinualVariant):
                v.build()
            else:
                v.agent.build(), v.env.build(), v.build_schedule()
        except ConfigError as exc:
            raise ConfigError(str(exc), f"{cfg.kind}.variants.{i}") from None
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Load YAML or JSON from ``path`` and validate it."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_dict(data)


# ---------------------------------------------------------------- presets

def _inject(steps, **kw):
    return {"kind": "inject", "apply_steps": list(steps), "injection": kw}


def _preset_fig1():
    return {
        "kind": "continual",
        "preset": "fig1",
        "seeds": list(range(10)),
        "output_dir": "runs/fig1",
        "continual": {"variants": [
            {"name": "reset_never", "mode": "reset_never", "compare_to": "reset_every_task"},
            {"name": "reset_every_task", "mode": "reset_every_task"},
        ]},
    }


def _preset_rescue():
    return {
        "kind": "continual",
        "preset": "rescue",
        "seeds": list(range(10)),
        "output_dir": "runs/rescue",
        "continual": {"variants": [
            {"name": "reset_never", "mode": "reset_never"},
            {"name": "inject", "mode": "inject_at_task", "compare_to": "reset_never"},
            {"name": "snp", "mode": "snp_at_task", "compare_to": "reset_never"},
            {"name": "reset_head", "mode": "reset_head_at_task", "compare_to": "reset_never"},
        ]},
    }


BUDGET = 40_000
SWITCH_ENV = {"switch_step": BUDGET // 2, "switch_kind": "mirror_observation"}


def _rl(name, variants, seeds=(0, 1, 2), budget=BUDGET):
    return {
        "kind": "rl",
        "preset": name,
        "seeds": list(seeds),
        "output_dir": f"runs/{name}",
        "rl": {"budget_steps": budget, "eval_every": budget // 40, "variants": variants},
    }


def _preset_diagnose():
    env = dict(SWITCH_ENV)
    variants = [{"name": "baseline", "env": env}]
    for frac, label in ((0.125, "12p5"), (0.25, "25"), (0.5, "50")):
        variants.append({
            "name": f"inject_at_{label}pct", "env": env, "compare_to": "baseline", "group": "injection",
            "schedule": [_inject([int(BUDGET * frac)])],
        })
    return _rl("diagnose", variants)


def _preset_reincarnate():
    env = dict(SWITCH_ENV)
    mid = BUDGET // 2
    quarters = [BUDGET // 4, BUDGET // 2, 3 * BUDGET // 4]
    variants = [
        {"name": "baseline", "env": env},
        {"name": "injection", "env": env, "compare_to": "baseline", "schedule": [_inject([mid])]},
        {"name": "reset_1", "env": env, "compare_to": "baseline", "group": "reset",
         "schedule": [{"kind": "reset", "n_layers": 1, "apply_steps": [mid]}]},
        {"name": "reset_2", "env": env, "compare_to": "baseline", "group": "reset",
         "schedule": [{"kind": "reset", "n_layers": 2, "apply_steps": [mid]}]},
        {"name": "snp", "env": env, "compare_to": "baseline",
         "schedule": [{"kind": "snp", "shrink": 1.0, "sigma": 0.01, "apply_steps": quarters}]},
        {"name": "widen", "env": env, "compare_to": "baseline",
         "schedule": [{"kind": "widen", "apply_steps": [mid]}]},
    ]
    return _rl("reincarnate", variants)


def matching_width(widths, split_k=None) -> list[int]:
    """Uniform hidden width whose plain network has about as many parameters
    as encoder + old head + new trainable head after one injection."""
    widths = list(widths)
    k = max(0, len(widths) - 3) if split_k is None else split_k

    def count(ws):
        return sum(a * b + b for a, b in zip(ws, ws[1:]))

    head = widths[k:]
    target = count(widths) + count(head)
    best, best_gap = widths, math.inf
    for h in range(1, 8 * max(widths[1:-1]) + 1):
        ws = [widths[0]] + [h] * (len(widths) - 2) + [widths[-1]]
        gap = abs(count(ws) - target)
        if gap < best_gap:
            best, best_gap = ws, gap
    return best


def _preset_grow():
    small = scale_hidden_widths([50, 64, 64, 3], 1 / math.sqrt(2))
    large = matching_width(small)
    env = dict(SWITCH_ENV)
    variants = [
        {"name": "small", "env": env, "agent": {"widths": small}},
        {"name": "small_injection", "env": env, "agent": {"widths": small}, "compare_to": "small",
         "schedule": [_inject([BUDGET // 2])]},
        {"name": "larger_net", "env": env, "agent": {"widths": large}, "compare_to": "small"},
    ]
    return _rl("grow", variants)


def _preset_sensitivity():
    env = dict(SWITCH_ENV)
    variants = []

    def pair(label, agent):
        variants.append({"name": f"{label}_base", "env": env, "agent": agent})
        variants.append({"name": f"{label}_inject", "env": env, "agent": agent, "compare_to": f"{label}_base",
                         "schedule": [_inject([BUDGET // 2])]})

    for rr in (0.25, 0.5, 1.0, 2.0):
        pair(f"rr{rr:g}", {"replay_ratio": rr})
    for lr in (3e-4, 1e-3, 3e-3):
        pair(f"lr{lr:g}", {"learning_rate": lr})
    for steps in (-1, 0, 1):
        pair(f"size{steps:+d}", {"widths": scale_hidden_widths([50, 64, 64, 3], math.sqrt(2) ** steps)})
    pair("sn", {"spectral_norm": True})
    return _rl("sensitivity", variants)


def _preset_ablate():
    env = dict(SWITCH_ENV)
    mid = BUDGET // 2
    variants = [{"name": "baseline", "env": env}]

    def add(name, schedule, **extra):
        variants.append({"name": name, "env": env, "compare_to": "baseline", "schedule": schedule, **extra})

    add("injection", [_inject([mid])])
    for variant, label in (("whole_net", "whole_net"), ("whole_net_copy_encoder", "whole_net_copy_enc")):
        add(label, [_inject([mid], variant=variant)])
    for variant, label in (("shared_encoder", "injection"), ("whole_net", "whole_net"),
                           ("whole_net_copy_encoder", "whole_net_copy_enc")):
        add(f"{label}_unfrozen", [_inject([mid], variant=variant, freeze_old=False)])
    add("no_output_correction", [_inject([mid], output_correction=False)])
    add("copy_optimizer", [_inject([mid], optimizer_state_policy="copy_from_old_head")])
    add("multiple_injections", [_inject([BUDGET // 4, mid, 3 * BUDGET // 4])])
    add("adaptive_3x", [{"kind": "inject", "adaptive_factor": 3.0}])
    for frac, label in ((0.25, "25"), (0.75, "75")):
        add(f"inject_at_{label}pct", [_inject([int(BUDGET * frac)])], group="timestep")
    variants.append({"name": "l2", "env": env, "compare_to": "baseline", "agent": {"l2": 3e-6}})
    return _rl("ablate", variants)


def _preset_snp_grid():
    env = dict(SWITCH_ENV)
    variants = [{"name": "baseline", "env": env}]
    for lam in SNP_LAMBDAS:
        for sigma in SNP_SIGMAS:
            variants.append({
                "name": f"snp_l{lam:g}_s{sigma:g}", "env": env, "compare_to": "baseline", "group": "snp",
                "schedule": [{"kind": "snp", "shrink": lam, "sigma": sigma, "apply_steps": [BUDGET // 2]}],
            })
    return _rl("snp_grid", variants)


def _preset_rl_sanity():
    return _rl("rl_sanity", [{"name": "baseline"}], budget=10_000)


PRESETS = {
    "fig1": _preset_fig1,
    "rescue": _preset_rescue,
    "diagnose": _preset_diagnose,
    "reincarnate": _preset_reincarnate,
    "grow": _preset_grow,
    "sensitivity": _preset_sensitivity,
    "ablate": _preset_ablate,
    "snp_grid": _preset_snp_grid,
    "rl_sanity": _preset_rl_sanity,
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "preset")
    return from_dict(PRESETS[name]())
