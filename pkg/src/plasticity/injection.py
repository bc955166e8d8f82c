"""Plasticity injection.

After injection the model computes::

    base(enc(x)) + sum_g (residual_g(enc(x)) - correction_g(enc(x)))

``base`` is the head that existed at the first injection (frozen by
default), ``residual_g`` is a freshly initialized head and ``correction_g``
a frozen bitwise copy of it. Each generation's difference is formed before
it is added to the running output, so at injection time the added term is
exactly zero and predictions are preserved bit for bit.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, UsageError
from .nn import InitSpec, Network, RmsPropState, make_layer

Variant = Literal["shared_encoder", "whole_net", "whole_net_copy_encoder"]
VARIANTS = ("shared_encoder", "whole_net", "whole_net_copy_encoder")
OPTIMIZER_POLICIES = ("fresh", "copy_from_old_head")


@dataclass(frozen=True)
class InjectionConfig:
    split_k: int = 1
    variant: str = "shared_encoder"
    freeze_old: bool = True
    output_correction: bool = True
    optimizer_state_policy: str = "fresh"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}", "variant")
        if self.optimizer_state_policy not in OPTIMIZER_POLICIES:
            raise ConfigError(f"unknown policy {self.optimizer_state_policy!r}", "optimizer_state_policy")


@dataclass
class HeadGeneration:
    residual: Network
    correction: Network | None

    @property
    def output_correction(self) -> bool:
        return self.correction is not None


class InjectedNetwork:
    def __init__(self, encoder: Network, base: Network, generations, variant: str, split_k: int):
        self.encoder = encoder
        self.base = base
        self.generations = list(generations)
        self.variant = variant
        self.split_k = split_k
        # backward ablation switch: drop input-gradients of frozen heads
        self.stop_frozen_head_grads = False

    @property
    def input_width(self) -> int:
        return self.encoder.input_width

    @property
    def output_width(self) -> int:
        return self.base.output_width

    def components(self):
        yield "", self.encoder
        yield "base.", self.base
        for i, gen in enumerate(self.generations):
            yield f"g{i}.res.", gen.residual
            if gen.correction is not None:
                yield f"g{i}.cor.", gen.correction

    def heads(self):
        return [(p, net) for p, net in self.components() if p]

    def copy(self) -> "InjectedNetwork":
        return copy.deepcopy(self)

    def params(self, prefix: str = "", trainable_only: bool = False):
        out = {}
        for p, net in self.components():
            out.update(net.params(prefix + p, trainable_only))
        return out

    def set_params(self, values, prefix: str = "") -> None:
        for p, net in self.components():
            net.set_params(values, prefix + p)

    def n_params(self, trainable_only: bool = False) -> int:
        return sum(net.n_params(trainable_only) for _, net in self.components())

    def n_trainable(self) -> int:
        return self.n_params(trainable_only=True)

    def update_spectral(self, iters: int = 1) -> None:
        for _, net in self.components():
            net.update_spectral(iters)

    def descriptor(self) -> list:
        return [(p, net.offset, net.descriptor()) for p, net in self.components()]

    def forward(self, x):
        z, enc_cache = self.encoder.forward(x)
        out, base_cache = self.base.forward(z)
        gen_caches = []
        for gen in self.generations:
            r, rc = gen.residual.forward(z)
            if gen.correction is not None:
                c, cc = gen.correction.forward(z)
                out = out + (r - c)
            else:
                cc = None
                out = out + r
            gen_caches.append((rc, cc))
        return out, (enc_cache, base_cache, gen_caches)

    def backward(self, cache, grad_out, prefix: str = ""):
        enc_cache, base_cache, gen_caches = cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grads = {}
        dz = 0.0

        def head_backward(net, c, g, p):
            nonlocal dz
            hg, hdz = net.backward(c, g, prefix + p)
            grads.update(hg)
            if not (self.stop_frozen_head_grads and net.n_trainable() == 0):
                dz = dz + hdz

        head_backward(self.base, base_cache, grad_out, "base.")
        for i, (gen, (rc, cc)) in enumerate(zip(self.generations, gen_caches)):
            head_backward(gen.residual, rc, grad_out, f"g{i}.res.")
            if gen.correction is not None:
                head_backward(gen.correction, cc, -grad_out, f"g{i}.cor.")
        if np.isscalar(dz):
            dz = np.zeros((grad_out.shape[0], self.base.input_width))
        enc_grads, dx = self.encoder.backward(enc_cache, dz, prefix)
        grads.update(enc_grads)
        return grads, dx

    def __call__(self, x):
        return self.forward(x)[0]


def _fresh_like(template: Network, rng) -> Network:
    layers = [make_layer(rng, l.in_width, l.out_width, l.activation, l.spectral_norm) for l in template.layers]
    return Network(layers, template.input_width, template.offset)


def _new_generation(template: Network, cfg: InjectionConfig, init: InitSpec, copy_first: int = 0) -> HeadGeneration:
    """``template`` supplies shapes; its first ``copy_first`` layers are copied
    verbatim (copy-encoder variant) and the rest are freshly drawn."""
    rng = init.rng()
    fresh = _fresh_like(template.slice(copy_first), rng)
    layers = copy.deepcopy(template.layers[:copy_first]) + fresh.layers
    residual = Network(layers, template.input_width, template.offset)
    residual.set_trainable(True)
    correction = None
    if cfg.output_correction:
        correction = residual.copy()
        correction.set_trainable(False)
    return HeadGeneration(residual, correction)


def inject(net, cfg: InjectionConfig, init: InitSpec | None = None) -> InjectedNetwork:
    """Return a new injected model; ``net`` is not modified."""
    init = init or InitSpec()
    if isinstance(net, InjectedNetwork):
        return _reinject(net, cfg, init)
    if not isinstance(net, Network):
        raise UsageError(f"cannot inject into {type(net).__name__}")
    if not 0 <= cfg.split_k <= net.depth - 1:
        raise ConfigError(f"split_k={cfg.split_k} outside [0, {net.depth - 1}]", "split_k")
    if cfg.variant == "shared_encoder":
        encoder = net.slice(0, cfg.split_k)
        base = net.slice(cfg.split_k)
        gen = _new_generation(base, cfg, init)
    else:
        encoder = Network([], net.input_width, 0)
        base = net.copy()
        copy_first = cfg.split_k if cfg.variant == "whole_net_copy_encoder" else 0
        gen = _new_generation(net, cfg, init, copy_first)
    if cfg.freeze_old:
        base.set_trainable(False)
    return InjectedNetwork(encoder, base, [gen], cfg.variant, cfg.split_k)


def _reinject(inet: InjectedNetwork, cfg: InjectionConfig, init: InitSpec) -> InjectedNetwork:
    if cfg.variant != inet.variant or cfg.split_k != inet.split_k:
        raise ConfigError(
            f"re-injection must keep variant/split_k ({inet.variant}, {inet.split_k})", "variant"
        )
    new = inet.copy()
    current = new.generations[-1].residual
    if cfg.freeze_old:
        current.set_trainable(False)
    copy_first = cfg.split_k if cfg.variant == "whole_net_copy_encoder" else 0
    new.generations.append(_new_generation(current, cfg, init, copy_first))
    return new


def trainable_head_prefix(model) -> str:
    """Key prefix of the most recently added trainable head."""
    if isinstance(model, Network):
        return ""
    if model.generations:
        return f"g{len(model.generations) - 1}.res."
    return "base."


def injection_optimizer_state(state: RmsPropState, old_model, new_model, policy: str = "fresh") -> RmsPropState:
    """Carry RMSProp accumulators across an injection.

    Encoder keys are unchanged by injection so their accumulators survive.
    With ``copy_from_old_head`` the new residual head starts from the
    accumulators of the head that was trainable before.
    """
    new_state = state.copy()
    if policy == "copy_from_old_head":
        old_prefix = trainable_head_prefix(old_model)
        new_prefix = trainable_head_prefix(new_model)
        for key, p in new_model.params(trainable_only=True).items():
            if not key.startswith(new_prefix):
                continue
            src = old_prefix + key[len(new_prefix):]
            if src in state.nu and state.nu[src].shape == p.shape:
                new_state.nu[key] = state.nu[src].copy()
    elif policy != "fresh":
        raise ConfigError(f"unknown policy {policy!r}", "optimizer_state_policy")
    new_state.sync(new_model)
    return new_state


@dataclass
class AdaptiveTriggerState:
    w0_norm: float
    factor: float = 3.0
    fired: bool = False


def adaptive_trigger(state: AdaptiveTriggerState, current_norm: float) -> bool:
    """True exactly once: the first time ``current_norm > factor * w0_norm``."""
    if state.w0_norm <= 0:
        raise ConfigError("w0_norm must be positive", "w0_norm")
    if state.fired or not current_norm > state.factor * state.w0_norm:
        return False
    state.fired = True
    return True
