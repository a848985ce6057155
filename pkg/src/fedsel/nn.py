"""Minimal multilayer perceptron over flat float64 parameter vectors.

Parameters are packed layer by layer as ``W`` (row-major, ``in x out``)
followed by ``b``, so every model is a single 1-D array that can be averaged,
projected and checkpointed directly.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpArch:
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError("need at least input and output sizes", "layer_sizes")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"sizes must be positive, got {sizes}", "layer_sizes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def unpack(self, params: np.ndarray):
        """Split a flat vector into ``[(W, b), ...]`` views (no copies)."""
        if params.shape != (self.param_count,):
            raise ConfigError(
                f"parameter vector has shape {params.shape}, expected ({self.param_count},)"
            )
        layers = []
        off = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = params[off:off + a * b].reshape(a, b)
            off += a * b
            layers.append((W, params[off:off + b]))
            off += b
        return layers


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.005
    weight_decay: float = 1e-4
    momentum: float = 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("must be >= 0", "learning_rate")
        if not self.weight_decay >= 0:
            raise ConfigError("must be >= 0", "weight_decay")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError("must lie strictly between 0 and 1", "momentum")


def init_params(arch: MlpArch, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.param_count)
    for W, _ in arch.unpack(params):
        fan_in, fan_out = W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def _check_batch(arch: MlpArch, X: np.ndarray, y: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise ConfigError(f"features have shape {X.shape}, expected (n, {arch.n_inputs})")
    if y.shape != (X.shape[0],):
        raise ConfigError(f"labels have shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] == 0:
        raise ConfigError("empty batch")
    return X, y


def _forward(arch, layers, X):
    acts = [X]
    h = X
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k < len(layers) - 1:
            h = np.maximum(z, 0.0) if arch.activation == "relu" else np.tanh(z)
        else:
            h = z
        acts.append(h)
    return acts


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def logits(params: np.ndarray, arch: MlpArch, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return _forward(arch, arch.unpack(params), X)[-1]


def loss_and_grad(
    params: np.ndarray, arch: MlpArch, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0
) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``weight_decay/2 * ||params||^2`` and its exact gradient."""
    X, y = _check_batch(arch, X, y)
    layers = arch.unpack(params)
    acts = _forward(arch, layers, X)
    n = X.shape[0]
    logp = _log_softmax(acts[-1])
    loss = -logp[np.arange(n), y].mean() + 0.5 * weight_decay * float(params @ params)

    grad = weight_decay * params
    grad_layers = arch.unpack(grad)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        gW, gb = grad_layers[k]
        gW += acts[k].T @ delta
        gb += delta.sum(axis=0)
        if k > 0:
            delta = delta @ W.T
            if arch.activation == "relu":
                delta = delta * (acts[k] > 0.0)
            else:
                delta = delta * (1.0 - acts[k] ** 2)
    return float(loss), grad


def evaluate(params: np.ndarray, arch: MlpArch, X: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Return ``(accuracy, mean cross-entropy)``; argmax ties go to the lowest class."""
    X, y = _check_batch(arch, X, y)
    z = _forward(arch, arch.unpack(params), X)[-1]
    acc = float(np.mean(np.argmax(z, axis=1) == y))
    loss = float(-_log_softmax(z)[np.arange(len(y)), y].mean())
    return acc, loss
