"""IID bandit simulation of the GPCB selector and the theoretical regret bound.

Rewards for every arm and round are drawn up front into a table, and the
selection loop itself runs in :mod:`fedsel._kernels`.
"""

import csv
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import _kernels
from .errors import ConfigError

DISTRIBUTIONS = ("gaussian", "bernoulli")


@dataclass(frozen=True)
class BanditEnv:
    means: tuple
    sigmas: tuple = ()
    distribution: str = "gaussian"
    K: int = 1
    seed: int = 0

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        sigmas = tuple(float(s) for s in self.sigmas) or tuple(0.1 for _ in means)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)
        if not means:
            raise ConfigError("need at least one arm", "means")
        if any(not 0.0 <= m <= 1.0 for m in means):
            raise ConfigError("arm means must lie in [0, 1]", "means")
        if len(sigmas) != len(means) or any(s < 0 for s in sigmas):
            raise ConfigError("one nonnegative sigma per arm", "sigmas")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"must be one of {DISTRIBUTIONS}", "distribution")
        if not 1 <= self.K <= len(means):
            raise ConfigError(f"super-arm size must lie in [1, {len(means)}]", "K")

    @classmethod
    def spread(cls, arms: int, low: float = 0.1, high: float = 0.9, sigma: float = 0.1, **kw) -> "BanditEnv":
        """Evenly spaced means from ``low`` to ``high``."""
        return cls(tuple(np.linspace(low, high, arms)), tuple([sigma] * arms), **kw)

    @property
    def arms(self) -> int:
        return len(self.means)

    @property
    def best(self) -> float:
        return max(self.means)

    def oracle_value(self) -> float:
        return float(sum(sorted(self.means, reverse=True)[: self.K]))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Reward table of shape ``shape + (arms,)``, clipped to [0, 1]."""
        mu = np.asarray(self.means)
        if self.distribution == "bernoulli":
            return (rng.random(tuple(shape) + (self.arms,)) < mu).astype(np.float64)
        z = rng.standard_normal(tuple(shape) + (self.arms,))
        return np.clip(mu + np.asarray(self.sigmas) * z, 0.0, 1.0)


def tau_of(n: int, n_i: int) -> float:
    """Exploration term ``2 ln n / n_i``."""
    if n_i <= 0:
        raise ConfigError("arm has never been pulled", "n_i")
    if n < 1:
        raise ConfigError("must be >= 1", "n")
    return 2.0 * math.log(n) / n_i


def theorem_bound(t: int, tau: float) -> Optional[float]:
    """Expected-regret bound ``t e^{-tau/2} / (1 - (t+1) e^{-tau/2})``; ``None`` where undefined.

    The bound only exists while the denominator is positive.
    """
    if t < 1:
        raise ConfigError("must be >= 1", "t")
    if not tau > 0:
        raise ConfigError("must be positive", "tau")
    e = math.exp(-tau / 2.0)
    denom = 1.0 - (t + 1) * e
    if denom <= 0.0:
        return None
    return t * e / denom


@dataclass
class RegretCurve:
    """Replication-averaged cumulative regret with per-round pull extremes."""

    mean: np.ndarray
    stderr: np.ndarray
    increments: np.ndarray  # (replications, rounds)
    n_total: np.ndarray  # pulls issued after each round
    min_pulls: np.ndarray  # (replications, rounds)
    max_pulls: np.ndarray
    final_pulls: np.ndarray  # (replications, arms)

    @property
    def rounds(self) -> int:
        return self.mean.size

    def at(self, t: int) -> float:
        return float(self.mean[t - 1])


def simulate_iid(
    env: BanditEnv,
    rounds: int,
    rho: float = 1.0,
    replications: int = 100,
    alpha_schedule: str = "linear",
) -> RegretCurve:
    """Monte Carlo regret of GPCB super-arm selection on an IID environment.

    Every arm is pulled once before round 1. Round ``t`` then picks the top
    ``env.K`` confidence bounds with exploration weight ``rho * t / rounds``
    (or ``rho`` for ``alpha_schedule="constant"``); the regret increment is the
    oracle super-arm's mean minus the chosen arms' means.
    """
    if rounds < 1:
        raise ConfigError("must be >= 1", "rounds")
    if replications < 1:
        raise ConfigError("must be >= 1", "replications")
    if alpha_schedule not in ("linear", "constant"):
        raise ConfigError("must be 'linear' or 'constant'", "alpha_schedule")
    rng = np.random.default_rng(env.seed)
    table = np.ascontiguousarray(env.sample(rng, (replications, rounds + 1)))
    means = np.ascontiguousarray(env.means, dtype=np.float64)
    inc, nmin, nmax, pulls = _kernels.gpcb_runs(means, table, env.K, float(rho), alpha_schedule == "linear")
    cum = np.cumsum(inc, axis=1)
    mean = cum.mean(axis=0)
    if replications > 1:
        stderr = cum.std(axis=0, ddof=1) / math.sqrt(replications)
    else:
        stderr = np.zeros(rounds)
    n_total = env.arms + env.K * np.arange(1, rounds + 1)
    return RegretCurve(mean, stderr, inc, n_total, nmin, nmax, pulls)


@dataclass(frozen=True)
class BoundRow:
    t: int
    empirical: float
    stderr: float
    tau: float
    bound: Optional[float]

    @property
    def defined(self) -> bool:
        return self.bound is not None

    @property
    def satisfied(self) -> Optional[bool]:
        return None if self.bound is None else self.empirical <= self.bound


@dataclass
class BoundReport:
    rows: List[BoundRow]

    @property
    def defined_count(self) -> int:
        return sum(r.defined for r in self.rows)

    @property
    def defined_fraction(self) -> float:
        return self.defined_count / len(self.rows) if self.rows else 0.0

    @property
    def satisfied_fraction(self) -> Optional[float]:
        """Share of defined rounds where the empirical regret is within the bound."""
        if not self.defined_count:
            return None
        return sum(bool(r.satisfied) for r in self.rows if r.defined) / self.defined_count

    def summary_line(self) -> str:
        sat = self.satisfied_fraction
        sat_txt = "n/a" if sat is None else f"{sat:.4f}"
        return (
            f"rounds={len(self.rows)} defined={self.defined_count} "
            f"defined_fraction={self.defined_fraction:.4f} satisfied_fraction={sat_txt}"
        )


def bound_check(
    env: BanditEnv,
    rounds: int,
    replications: int = 100,
    rho: float = 1.0,
    alpha_schedule: str = "linear",
    curve: Optional[RegretCurve] = None,
) -> BoundReport:
    """Compare empirical regret with the bound at every round.

    ``tau`` at round ``t`` uses the live totals after that round and the
    least-pulled arm (the largest exploration term), averaged over
    replications. Rounds where the bound is undefined stay in the report.
    """
    if curve is None:
        curve = simulate_iid(env, rounds, rho, replications, alpha_schedule)
    tau = (2.0 * np.log(curve.n_total)[None, :] / curve.min_pulls).mean(axis=0)
    rows = [
        BoundRow(t, float(curve.mean[t - 1]), float(curve.stderr[t - 1]), float(tau[t - 1]),
                 theorem_bound(t, float(tau[t - 1])))
        for t in range(1, curve.rounds + 1)
    ]
    return BoundReport(rows)


REPORT_COLUMNS = ("t", "empirical_regret", "stderr", "bound", "defined", "satisfied")


def write_report(report: BoundReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow([
                r.t,
                repr(r.empirical),
                repr(r.stderr),
                "" if r.bound is None else repr(r.bound),
                int(r.defined),
                "" if r.satisfied is None else int(r.satisfied),
            ])


def read_arms(path) -> BanditEnv:
    """Arms file: one ``mean [sigma]`` pair per line; ``#`` starts a comment."""
    means, sigmas = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                means.append(float(parts[0]))
                sigmas.append(float(parts[1]) if len(parts) > 1 else 0.1)
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{lineno}: expected 'mean [sigma]'") from None
    return BanditEnv(tuple(means), tuple(sigmas))


def increment_cap(env: BanditEnv) -> float:
    """Largest possible per-round regret, ``K * (best mean - worst mean)``."""
    return env.K * (max(env.means) - min(env.means))


def sublinearity_ratio(curve: RegretCurve, t: int) -> float:
    """``R(2t) / R(t)``; below 2 means the curve bends down over that window."""
    return curve.at(2 * t) / curve.at(t)
