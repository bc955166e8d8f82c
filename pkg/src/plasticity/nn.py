"""Dense networks in fp64 numpy with hand-written backprop and RMSProp.

Parameters are addressed by string keys such as ``"L2.W"`` or
``"g0.res.L2.b"``. Gradients, optimizer accumulators and parameter
snapshots are all plain ``dict[str, np.ndarray]`` keyed the same way.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, UsageError

ACTIVATIONS = ("relu", "identity")

_cache_ids = itertools.count()


@dataclass(frozen=True)
class InitSpec:
    seed: int = 0
    scheme: str = "he_uniform"

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def he_uniform(rng: np.random.Generator, out_width: int, in_width: int) -> np.ndarray:
    # U(-l, l) with l = sqrt(6 / fan_in) has variance 2 / fan_in
    limit = np.sqrt(6.0 / in_width)
    return rng.uniform(-limit, limit, size=(out_width, in_width))


def spectral_estimate(weight, iters=1, u=None):
    """Power-iteration estimate of the largest singular value.

    ``weight`` is ``[out, in]``; ``u`` (length ``out``) warm-starts the
    iteration. Returns ``(sigma, u, v)`` with ``sigma = u @ weight @ v``.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1", "iters")
    weight = np.asarray(weight, dtype=np.float64)
    n_out, n_in = weight.shape
    if u is None:
        u = np.full(n_out, 1.0 / np.sqrt(n_out))
    v = np.full(n_in, 1.0 / np.sqrt(n_in))
    for _ in range(iters):
        wv = weight.T @ u
        norm = np.linalg.norm(wv)
        if norm == 0.0:
            # zero matrix: keep deterministic unit vectors
            return 0.0, np.full(n_out, 1.0 / np.sqrt(n_out)), np.full(n_in, 1.0 / np.sqrt(n_in))
        v = wv / norm
        wu = weight @ v
        u = wu / np.linalg.norm(wu)
    return float(u @ weight @ v), u, v


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"
    train_W: bool = True
    train_b: bool = True
    spectral_norm: bool = False
    sn_u: np.ndarray | None = None
    sn_v: np.ndarray | None = None

    @property
    def in_width(self) -> int:
        return self.W.shape[1]

    @property
    def out_width(self) -> int:
        return self.W.shape[0]

    @property
    def frozen(self) -> bool:
        return not (self.train_W or self.train_b)

    def sigma(self) -> float:
        return float(self.sn_u @ self.W @ self.sn_v)

    def effective_weight(self) -> np.ndarray:
        if not self.spectral_norm:
            return self.W
        sigma = self.sigma()
        if sigma == 0.0:
            return self.W
        return self.W / sigma

    def power_iterate(self, iters: int = 1) -> None:
        _, self.sn_u, self.sn_v = spectral_estimate(self.W, iters, self.sn_u)


@dataclass
class Cache:
    owner: int
    version: int
    inputs: list
    preacts: list
    token: int = field(default_factory=lambda: next(_cache_ids))


class Network:
    """Ordered dense layers. ``offset`` is the global index of layer 0, so a
    head fragment cut out of a deeper network keeps its parameter keys."""

    def __init__(self, layers: Sequence[DenseLayer], input_width: int, offset: int = 0):
        self.layers = list(layers)
        self.input_width = int(input_width)
        self.offset = int(offset)
        self._version = 0
        width = self.input_width
        for i, layer in enumerate(self.layers):
            if layer.in_width != width:
                raise DimensionError(f"layer {offset + i} expects width {layer.in_width}, got {width}")
            if layer.b.shape != (layer.out_width,):
                raise DimensionError(f"layer {offset + i} bias shape {layer.b.shape}")
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}", f"layers[{offset + i}].activation")
            width = layer.out_width

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width if self.layers else self.input_width

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [layer.out_width for layer in self.layers]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def slice(self, start: int, stop: int | None = None) -> "Network":
        """Deep-copied fragment of layers ``[start, stop)``."""
        stop = self.depth if stop is None else stop
        width = self.widths[start]
        return Network(copy.deepcopy(self.layers[start:stop]), width, self.offset + start)

    def blocks(self, prefix: str = "") -> Iterator[tuple[str, DenseLayer, str, bool]]:
        for i, layer in enumerate(self.layers):
            base = f"{prefix}L{self.offset + i}"
            yield f"{base}.W", layer, "W", layer.train_W
            yield f"{base}.b", layer, "b", layer.train_b

    def params(self, prefix: str = "", trainable_only: bool = False) -> dict[str, np.ndarray]:
        return {k: getattr(layer, attr) for k, layer, attr, tr in self.blocks(prefix) if tr or not trainable_only}

    def set_params(self, values: dict[str, np.ndarray], prefix: str = "") -> None:
        for key, layer, attr, _ in self.blocks(prefix):
            if key in values:
                setattr(layer, attr, values[key])
        self._version += 1

    def set_trainable(self, flag: bool) -> None:
        for layer in self.layers:
            layer.train_W = layer.train_b = flag

    def n_params(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.params(trainable_only=trainable_only).values())

    def n_trainable(self) -> int:
        return self.n_params(trainable_only=True)

    def update_spectral(self, iters: int = 1) -> None:
        """One warm-started power iteration for trainable SN layers."""
        for layer in self.layers:
            if layer.spectral_norm and not layer.frozen:
                layer.power_iterate(iters)
        self._version += 1

    def descriptor(self) -> list:
        return [
            (layer.W.shape, layer.activation, layer.train_W, layer.train_b, layer.spectral_norm)
            for layer in self.layers
        ]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.input_width:
            raise DimensionError(f"input width {x.shape[-1]} != {self.input_width}")
        inputs, preacts = [], []
        h = x
        # overflow is reported as a DivergenceError below, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for layer in self.layers:
                inputs.append(h)
                z = h @ layer.effective_weight().T + layer.b
                preacts.append(z)
                h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if not np.all(np.isfinite(h)):
            raise DivergenceError("non-finite network output")
        return h, Cache(id(self), self._version, inputs, preacts)

    def backward(self, cache: Cache, grad_out, prefix: str = ""):
        """Returns ``(grads, grad_input)``; grads only for trainable blocks."""
        if cache.owner != id(self) or cache.version != self._version:
            raise UsageError("stale cache: network changed since forward")
        g = np.asarray(grad_out, dtype=np.float64)
        grads = {}
        for i in reversed(range(self.depth)):
            layer = self.layers[i]
            z = cache.preacts[i]
            if layer.activation == "relu":
                g = g * (z > 0.0)
            key = f"{prefix}L{self.offset + i}"
            w_eff = layer.effective_weight()
            if layer.train_W:
                g_eff = g.T @ cache.inputs[i]
                if layer.spectral_norm and w_eff is not layer.W:
                    sigma = layer.sigma()
                    coef = np.sum(g_eff * layer.W) / sigma**2
                    grads[f"{key}.W"] = g_eff / sigma - coef * np.outer(layer.sn_u, layer.sn_v)
                else:
                    grads[f"{key}.W"] = g_eff
            if layer.train_b:
                grads[f"{key}.b"] = g.sum(axis=0)
            g = g @ w_eff
        return grads, g

    def __call__(self, x):
        return self.forward(x)[0]


def build_network(widths, activations=None, init: InitSpec | None = None, spectral_norm_layers=(), offset: int = 0):
    """He-uniform weights, zero biases. Default activations: ReLU hidden,
    identity output."""
    widths = list(widths)
    if len(widths) < 2 or any(int(w) != w or w <= 0 for w in widths):
        raise ConfigError(f"widths must be >= 2 positive ints, got {widths}", "widths")
    n = len(widths) - 1
    if activations is None:
        activations = ["relu"] * (n - 1) + ["identity"]
    if len(activations) != n:
        raise ConfigError(f"need {n} activations, got {len(activations)}", "activations")
    init = init or InitSpec()
    rng = init.rng()
    layers = [make_layer(rng, widths[i], widths[i + 1], activations[i], (offset + i) in spectral_norm_layers) for i in range(n)]
    return Network(layers, widths[0], offset)


def make_layer(rng, in_width, out_width, activation, spectral_norm=False):
    layer = DenseLayer(he_uniform(rng, out_width, in_width), np.zeros(out_width), activation, spectral_norm=spectral_norm)
    if spectral_norm:
        layer.power_iterate(1)
    return layer


def reinit_layers(net: Network, indices, init: InitSpec) -> None:
    """Redraw the given (local) layer indices in order from a fresh stream."""
    rng = init.rng()
    for i in indices:
        old = net.layers[i]
        net.layers[i] = make_layer(rng, old.in_width, old.out_width, old.activation, old.spectral_norm)
    net._version += 1


def forward(net, x):
    return net.forward(x)


def backward(net, cache, grad_out):
    return net.backward(cache, grad_out)


def mse_loss(pred, target):
    """Mean over all entries; returns ``(loss, dloss/dpred)``."""
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


@dataclass
class RmsPropState:
    learning_rate: float = 1e-3
    decay_rho: float = 0.99
    epsilon: float = 1e-8
    nu: dict = field(default_factory=dict)

    def copy(self) -> "RmsPropState":
        return RmsPropState(self.learning_rate, self.decay_rho, self.epsilon, {k: v.copy() for k, v in self.nu.items()})

    def sync(self, model) -> None:
        """Drop accumulators for blocks that are no longer trainable."""
        live = model.params(trainable_only=True)
        self.nu = {k: v for k, v in self.nu.items() if k in live and v.shape == live[k].shape}


def rmsprop_step(state: RmsPropState, params, grads):
    """nu <- rho*nu + (1-rho)*g^2, then w <- w - lr*g/(sqrt(nu)+eps).

    Pure: returns ``(new_params, new_state)``; missing accumulators start at 0.
    """
    rho, lr, eps = state.decay_rho, state.learning_rate, state.epsilon
    new_params, new_nu = {}, dict(state.nu)
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in block {key}")
        w = params[key]
        if w.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {w.shape} for {key}")
        nu = rho * state.nu.get(key, np.zeros_like(w)) + (1.0 - rho) * g * g
        new_nu[key] = nu
        new_params[key] = w - lr * g / (np.sqrt(nu) + eps)
    return new_params, RmsPropState(lr, rho, eps, new_nu)


def apply_gradients(model, state: RmsPropState, grads) -> RmsPropState:
    new_params, new_state = rmsprop_step(state, model.params(trainable_only=True), grads)
    model.set_params(new_params)
    return new_state


def weight_norm(model, scope: str = "weights_only") -> float:
    if scope not in ("weights_only", "weights_and_biases"):
        raise ConfigError(f"unknown scope {scope!r}", "scope")
    parts = [p.ravel() for k, p in model.params().items() if scope == "weights_and_biases" or k.endswith(".W")]
    if not parts:
        return 0.0
    return float(np.linalg.norm(np.concatenate(parts)))


def l2_penalty_grads(model, lam: float):
    """Gradient of ``lam * sum(w**2)`` over trainable weights (biases excluded)."""
    if lam < 0:
        raise ConfigError("lambda must be >= 0", "l2")
    return {k: 2.0 * lam * p for k, p in model.params(trainable_only=True).items() if k.endswith(".W")}


def add_grads(a, b):
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out
