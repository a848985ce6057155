"""Client-selection strategies and the bandit statistics behind GPCB.

Ranking ties are always broken by fewer pulls first, then the lower client id.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError, SelectionLogicError, UnpulledArm

STRATEGIES = ("gpcb", "random", "pow_d", "top_gp")
MEAN_MODES = ("per_pull", "per_round")


def alpha_at(t: int, T: int, rho: float) -> float:
    """Linear exploration weight ``rho * t / T``."""
    if T <= 0:
        raise ConfigError("horizon must be positive", "rounds")
    if not 1 <= t <= T:
        raise ConfigError(f"round {t} outside [1, {T}]")
    return rho * t / T


@dataclass
class BanditStats:
    reward_sum: np.ndarray
    pulls: np.ndarray
    total: int
    t: int
    horizon: int
    rho: float = 1.0
    mean_mode: str = "per_pull"
    reward_rounds: int = 0
    eligible: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, initial_rewards, horizon: int, rho: float = 1.0, mean_mode: str = "per_pull",
                eligible=None) -> "BanditStats":
        """Stats after every eligible arm has been pulled once with the given rewards."""
        r = np.clip(np.asarray(initial_rewards, dtype=np.float64), 0.0, 1.0)
        elig = np.ones(r.size, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
        if mean_mode not in MEAN_MODES:
            raise ConfigError(f"unknown mean mode {mean_mode!r}", "mean_mode")
        return cls(
            reward_sum=np.where(elig, r, 0.0),
            pulls=elig.astype(np.int64),
            total=int(elig.sum()),
            t=0,
            horizon=horizon,
            rho=rho,
            mean_mode=mean_mode,
            reward_rounds=1,
            eligible=elig,
        )

    @property
    def num_arms(self) -> int:
        return self.pulls.size

    def mean_rewards(self) -> np.ndarray:
        if self.mean_mode == "per_round":
            return self.reward_sum / max(self.reward_rounds, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.pulls > 0, self.reward_sum / np.maximum(self.pulls, 1), 0.0)

    def copy(self) -> "BanditStats":
        return BanditStats(
            self.reward_sum.copy(), self.pulls.copy(), self.total, self.t, self.horizon,
            self.rho, self.mean_mode, self.reward_rounds,
            None if self.eligible is None else self.eligible.copy(),
        )


@dataclass(frozen=True)
class SelectionOutcome:
    selected: Tuple[int, ...]
    scores: np.ndarray
    candidates: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if len(set(self.selected)) != len(self.selected):
            raise SelectionLogicError(f"duplicate ids in selection {self.selected}")


def _rank(scores, pulls, K, eligible=None):
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if not 1 <= K <= n:
        raise ConfigError(f"cannot select {K} of {n} clients", "clients_per_round")
    pulls = np.zeros(n, dtype=np.int64) if pulls is None else np.asarray(pulls)
    keyed = scores if eligible is None else np.where(eligible, scores, -np.inf)
    if eligible is not None and int(np.sum(eligible)) < K:
        raise ConfigError(f"only {int(np.sum(eligible))} eligible clients for K={K}", "clients_per_round")
    order = np.lexsort((np.arange(n), pulls, -keyed))
    return tuple(int(i) for i in order[:K])


def gpcb_scores(stats: BanditStats, alpha: Optional[float] = None) -> np.ndarray:
    """Confidence bounds ``mean + alpha * sqrt(2 ln n / n_i)`` for every arm.

    ``alpha`` defaults to the linear schedule at ``stats.t``.
    """
    if alpha is None:
        alpha = alpha_at(stats.t, stats.horizon, stats.rho)
    if stats.total < 1:
        raise UnpulledArm("no arm has been pulled yet")
    pulls = stats.pulls.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        bonus = np.sqrt(2.0 * math.log(stats.total) / pulls)
    u = stats.mean_rewards() + alpha * bonus
    if stats.eligible is not None:
        u = np.where(stats.eligible, u, -np.inf)
    return u


def gpcb_score(stats: BanditStats, client_id: int, alpha: Optional[float] = None) -> float:
    if stats.pulls[client_id] == 0:
        raise UnpulledArm(f"client {client_id} has never been selected")
    return float(gpcb_scores(stats, alpha)[client_id])


def select_gpcb(stats: BanditStats, K: int, alpha: Optional[float] = None) -> SelectionOutcome:
    """Top-K clients by confidence bound."""
    u = gpcb_scores(stats, alpha)
    return SelectionOutcome(_rank(u, stats.pulls, K, stats.eligible), u)


def select_top_gp(gp_values, K: int, pulls=None, eligible=None) -> SelectionOutcome:
    """Top-K clients by stored GP value, with no exploration term."""
    gp = np.asarray(gp_values, dtype=np.float64)
    return SelectionOutcome(_rank(gp, pulls, K, eligible), gp.copy())


def select_random(N: int, K: int, rng: np.random.Generator, eligible=None) -> SelectionOutcome:
    """Uniform sample of K distinct clients."""
    pool = np.arange(N) if eligible is None else np.flatnonzero(eligible)
    if not 1 <= K <= pool.size:
        raise ConfigError(f"cannot select {K} of {pool.size} clients", "clients_per_round")
    chosen = rng.choice(pool, size=K, replace=False)
    return SelectionOutcome(tuple(int(i) for i in chosen), np.zeros(N))


def select_pow_d(
    N: int,
    d: int,
    K: int,
    local_loss: Callable[[int], float],
    rng: np.random.Generator,
    eligible=None,
) -> SelectionOutcome:
    """Power-of-choice: sample ``d`` candidates, keep the K with the highest local loss.

    ``local_loss(i)`` evaluates the current global model on client ``i``'s data.
    Non-candidates score ``-inf``.
    """
    pool = np.arange(N) if eligible is None else np.flatnonzero(eligible)
    if d < K:
        raise ConfigError(f"need at least K={K} candidates, got {d}", "pow_d_candidates")
    if d > pool.size:
        raise ConfigError(f"{d} candidates requested from {pool.size} clients", "pow_d_candidates")
    candidates = np.sort(rng.choice(pool, size=d, replace=False))
    scores = np.full(N, -np.inf)
    for i in candidates:
        scores[i] = local_loss(int(i))
    selected = _rank(scores, None, K)
    return SelectionOutcome(selected, scores, tuple(int(i) for i in candidates))


def record_rewards(stats: BanditStats, outcome: SelectionOutcome, rewards: Mapping[int, float]) -> BanditStats:
    """Fold one round of rewards into ``stats`` (in place) and return it.

    Rewards are clipped to [0, 1] here; this is the only place clipping happens.
    """
    extra = set(rewards) - set(outcome.selected)
    if extra:
        raise SelectionLogicError(f"rewards given for unselected clients {sorted(extra)}")
    for i in outcome.selected:
        if i in rewards:
            stats.reward_sum[i] += min(max(float(rewards[i]), 0.0), 1.0)
        stats.pulls[i] += 1
    stats.total += len(outcome.selected)
    stats.reward_rounds += 1
    return stats

