"""Baseline interventions: last-layer resets, Shrink-and-Perturb and naive
width scaling, plus schedule specs shared by the benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .injection import InjectionConfig
from .nn import DenseLayer, InitSpec, Network, RmsPropState, he_uniform, reinit_layers

KINDS = ("reset", "snp", "widen", "inject")

# default sweep grid for Shrink-and-Perturb
SNP_LAMBDAS = (0.1, 0.3, 1.0)
SNP_SIGMAS = (0.01, 0.1, 1.0)


@dataclass
class InterventionSpec:
    kind: str
    apply_steps: list = field(default_factory=list)
    n_layers: int = 1
    shrink: float = 1.0
    sigma: float = 0.01
    zero_new_outgoing: bool = False
    injection: InjectionConfig | None = None
    # inject only: fire once when weight norm exceeds factor * initial norm
    adaptive_factor: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown intervention {self.kind!r}", "kind")
        steps = list(self.apply_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("apply_steps must be strictly increasing", "apply_steps")
        if any(s < 0 for s in steps):
            raise ConfigError("apply_steps must be >= 0", "apply_steps")
        if not 0.0 <= self.shrink <= 1.0:
            raise ConfigError("shrink must lie in [0, 1]", "shrink")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0", "sigma")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0", "n_layers")
        if self.kind == "inject" and self.injection is None:
            self.injection = InjectionConfig()
        if self.adaptive_factor is not None and (self.kind != "inject" or self.adaptive_factor <= 0):
            raise ConfigError("adaptive_factor needs kind=inject and a positive value", "adaptive_factor")


def _require_network(net):
    if not isinstance(net, Network):
        raise ConfigError(f"intervention needs a plain Network, got {type(net).__name__}")


def reset_last_layers(net: Network, n_layers: int, init: InitSpec) -> Network:
    _require_network(net)
    if not 0 <= n_layers <= net.depth:
        raise ConfigError(f"n_layers={n_layers} outside [0, {net.depth}]", "n_layers")
    new = net.copy()
    reinit_layers(new, range(net.depth - n_layers, net.depth), init)
    return new


def reset_optimizer_state(state: RmsPropState, old: Network, new: Network) -> RmsPropState:
    """Keep accumulators only for blocks whose values survived unchanged."""
    keep = {}
    new_params = new.params(trainable_only=True)
    old_params = old.params()
    for k, nu in state.nu.items():
        if k in new_params and k in old_params and np.array_equal(old_params[k], new_params[k]):
            keep[k] = nu.copy()
    return RmsPropState(state.learning_rate, state.decay_rho, state.epsilon, keep)


def shrink_and_perturb(net: Network, shrink: float, sigma: float, seed: int = 0) -> Network:
    """w <- shrink * w + sigma * eps on every weight and bias, eps ~ N(0, 1)."""
    _require_network(net)
    if not 0.0 <= shrink <= 1.0:
        raise ConfigError("shrink must lie in [0, 1]", "shrink")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0", "sigma")
    new = net.copy()
    if shrink == 1.0 and sigma == 0.0:
        return new
    rng = np.random.default_rng(seed)
    values = {k: shrink * p + sigma * rng.standard_normal(p.shape) for k, p in new.params().items()}
    new.set_params(values)
    return new


def widen_last_layers(net: Network, init: InitSpec, zero_new_outgoing: bool = False) -> Network:
    """Double the hidden width feeding the output layer.

    The penultimate layer ``[K x N]`` becomes ``[2K x N]`` with its first K
    rows copied; the output layer ``[A x K]`` becomes ``[A x 2K]`` with its
    first K columns copied. New bias entries are zero; other new entries
    are drawn from the initializer, or zeroed on the outgoing side when
    ``zero_new_outgoing`` is set (then the function is unchanged).
    """
    _require_network(net)
    if net.depth < 2:
        raise ConfigError("widening needs at least 2 layers", "layers")
    new = net.copy()
    rng = init.rng()
    first, last = new.layers[-2], new.layers[-1]
    k, n = first.W.shape
    a = last.out_width
    w1 = np.concatenate([first.W, he_uniform(rng, k, n)], axis=0)
    b1 = np.concatenate([first.b, np.zeros(k)])
    tail = np.zeros((a, k)) if zero_new_outgoing else he_uniform(rng, a, 2 * k)[:, k:]
    w2 = np.concatenate([last.W, tail], axis=1)
    new.layers[-2] = _resized(first, w1, b1)
    new.layers[-1] = _resized(last, w2, last.b.copy())
    new._version += 1
    return new


def _resized(layer: DenseLayer, w, b) -> DenseLayer:
    out = DenseLayer(w, b, layer.activation, layer.train_W, layer.train_b, layer.spectral_norm)
    if layer.spectral_norm:
        out.power_iterate(1)
    return out


def widen_optimizer_state(state: RmsPropState, old: Network, new: Network) -> RmsPropState:
    """Copied entries keep their accumulators, new entries start at zero."""
    nu = {}
    new_params = new.params(trainable_only=True)
    for k, acc in state.nu.items():
        if k not in new_params:
            continue
        target = np.zeros_like(new_params[k])
        target[tuple(slice(0, s) for s in acc.shape)] = acc
        nu[k] = target
    return RmsPropState(state.learning_rate, state.decay_rho, state.epsilon, nu)


def scale_hidden_widths(widths, factor: float) -> list[int]:
    """Multiply hidden widths by ``factor`` (sqrt(2) doubles parameter count)."""
    if factor <= 0:
        raise ConfigError("factor must be positive", "factor")
    widths = list(widths)
    hidden = [max(1, int(math.floor(w * factor + 0.5))) for w in widths[1:-1]]
    return [widths[0], *hidden, widths[-1]]
