"""Momentum local training, gradient projection and reward shaping."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ProjectionUndefined
from .nn import MlpArch, SgdConfig, loss_and_grad

log = logging.getLogger(__name__)


@dataclass
class ClientState:
    id: int
    momentum: np.ndarray
    gp_value: float = 0.0
    reward_sum: float = 0.0
    selection_count: int = 0
    last_reward: float = 0.0


@dataclass(frozen=True)
class GlobalDirection:
    vector: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64))
        object.__setattr__(self, "norm", float(np.linalg.norm(self.vector)))

    @classmethod
    def mean_of(cls, vectors) -> "GlobalDirection":
        return cls(np.mean(np.stack(list(vectors)), axis=0))


def mgd_step(momentum, params, grad, gamma: float, eta: float):
    """One momentum step: ``d = gamma * d_prev + grad``, ``w = w_prev - eta * d``.

    Returns ``(new_params, new_momentum)``; inputs are not modified.
    """
    if not (len(momentum) == len(params) == len(grad)):
        raise ConfigError(
            f"length mismatch: momentum {len(momentum)}, params {len(params)}, grad {len(grad)}"
        )
    d = gamma * np.asarray(momentum) + np.asarray(grad)
    return np.asarray(params) - eta * d, d


@dataclass
class LocalResult:
    params: np.ndarray
    momentum: np.ndarray
    last_grad: np.ndarray
    steps: int
    skipped: bool = False


def local_train(
    X,
    y,
    params: np.ndarray,
    momentum: np.ndarray,
    arch: MlpArch,
    sgd: SgdConfig,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> LocalResult:
    """Run ``epochs`` passes of shuffled minibatch momentum descent on one client's data.

    Each epoch draws a fresh permutation from ``rng`` and takes
    ``ceil(n / batch_size)`` steps, the last batch possibly short. A client
    with no data is returned unchanged with ``skipped=True``.
    """
    if epochs < 1:
        raise ConfigError("must be >= 1", "local_epochs")
    if batch_size < 1:
        raise ConfigError("must be >= 1", "batch_size")
    n = len(y)
    if n == 0:
        log.warning("client has no data; skipping local training")
        return LocalResult(params.copy(), momentum.copy(), np.zeros_like(params), 0, skipped=True)
    w, d = params, momentum
    grad = np.zeros_like(params)
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            _, grad = loss_and_grad(w, arch, X[batch], y[batch], sgd.weight_decay)
            w, d = mgd_step(d, w, grad, sgd.momentum, sgd.learning_rate)
            steps += 1
    return LocalResult(w, d, grad, steps)


def gradient_projection(local_direction, g: GlobalDirection) -> float:
    """Scalar projection of a client's descent direction onto the global one."""
    if g.norm == 0.0 or not math.isfinite(g.norm):
        raise ProjectionUndefined("global direction has zero (or non-finite) norm")
    return float(np.dot(local_direction, g.vector) / g.norm)


def normalize_gp(c) -> np.ndarray:
    """Softmax with the max subtracted first, so large GP values cannot overflow."""
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ConfigError("no GP values to normalise")
    e = np.exp(c - c.max())
    return e / e.sum()


def adjust_reward(
    c_tilde: float,
    acc_now: float,
    acc_prev: float,
    loss_now: float,
    loss_prev: float,
    acc_eps: float = 0.0,
) -> float:
    """Scale a normalised GP value by the round's accuracy (or, if flat, loss) change.

    Accuracies count as equal when they differ by at most ``acc_eps``
    (exact comparison by default). The result is not clipped; values above
    one are expected when accuracy rises.
    """
    if abs(acc_now - acc_prev) > acc_eps:
        return c_tilde * 2.0 * math.exp(acc_now - acc_prev)
    return c_tilde * math.exp(loss_now - loss_prev)


def client_rng(seed: int, round_no: int, client_id: int, stream: Optional[int] = 0) -> np.random.Generator:
    """Independent generator per (seed, round, client) so results never depend on scheduling."""
    return np.random.default_rng([seed, round_no, client_id, stream])
