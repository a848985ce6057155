"""Round loop: initialisation, local training, FedAvg, evaluation and reward updates.

Every random draw is keyed by ``(seed, round, client)``, so results do not
depend on worker scheduling and a resumed run needs no generator state.
"""

import csv
import json
import logging
import os
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, Partition, PartitionSpec, gen_synthetic, make_partition, split_per_class
from .errors import ConfigError
from .gp import (
    ClientState,
    GlobalDirection,
    LocalResult,
    adjust_reward,
    client_rng,
    gradient_projection,
    local_train,
    normalize_gp,
)
from .nn import evaluate, init_params
from .selection import (
    BanditStats,
    SelectionOutcome,
    alpha_at,
    gpcb_scores,
    record_rewards,
    select_gpcb,
    select_pow_d,
    select_random,
    select_top_gp,
)

log = logging.getLogger(__name__)

SELECT_STREAM = 1
CHECKPOINT_NAME = "checkpoint.pkl"
LAST_ROUNDS = 10


def fedavg(models: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinatewise mean of equally weighted parameter vectors."""
    if len(models) == 0:
        raise ConfigError("nothing to aggregate")
    n = len(models[0])
    if any(len(m) != n for m in models):
        raise ConfigError("parameter vectors differ in length")
    return np.mean(np.stack(models), axis=0)


@dataclass
class RoundRecord:
    t: int
    selected: Tuple[int, ...]
    accuracy: float
    loss: float
    per_client: Dict[str, Dict[int, float]]
    counters: Dict[str, int]
    timings: Dict[str, float] = field(default_factory=dict)
    candidates: Tuple[int, ...] = ()

    def to_json(self) -> dict:
        out = {
            "t": self.t,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "selected": list(self.selected),
            "per_client": {k: {str(i): v for i, v in m.items()} for k, m in self.per_client.items()},
            "counters": self.counters,
        }
        if self.candidates:
            out["candidates"] = list(self.candidates)
        return out


@dataclass
class ClientData:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class SimState:
    cfg: ExperimentConfig
    eval_set: Dataset
    clients_data: List[ClientData]
    partition: Partition
    params: np.ndarray
    clients: List[ClientState]
    stats: BanditStats
    direction: GlobalDirection
    acc_prev: float
    loss_prev: float
    pending: Optional[Tuple[int, ...]]
    init_counters: Dict[str, int]
    t: int = 0
    records: List[RoundRecord] = field(default_factory=list)

    @property
    def eligible(self) -> np.ndarray:
        return np.array([len(c) > 0 for c in self.clients_data])

    @property
    def gp_values(self) -> np.ndarray:
        return np.array([c.gp_value for c in self.clients])


@dataclass
class ExperimentResult:
    params: np.ndarray
    records: List[RoundRecord]
    summary: dict
    state: SimState


def build_data(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset, Partition]:
    """Synthetic train/eval split plus the configured client partition."""
    dc = cfg.data
    full = gen_synthetic(dc.class_count, dc.per_class + dc.eval_per_class, dc.dims, dc.sep,
                         cfg.data_seed, dc.noise)
    train, held_out = split_per_class(full, dc.eval_per_class)
    pc = cfg.partition
    spec = PartitionSpec(pc.scheme, cfg.num_clients, shards_per_client=pc.shards_per_client,
                         zeta=pc.zeta, seed=cfg.seed, max_draws=pc.max_draws)
    return train, held_out, make_partition(train, spec)


def worker_count() -> int:
    raw = os.environ.get("FEDSEL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FEDSEL_THREADS must be an integer, got {raw!r}") from None


def _train_many(state: SimState, ids: Sequence[int], round_no: int, params: np.ndarray) -> Dict[int, LocalResult]:
    cfg = state.cfg
    arch = cfg.arch

    def job(i):
        cd = state.clients_data[i]
        return local_train(cd.X, cd.y, params, state.clients[i].momentum, arch, cfg.sgd,
                           cfg.local_epochs, cfg.batch_size, client_rng(cfg.seed, round_no, i))

    ids = sorted(ids)
    workers = min(worker_count(), len(ids))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ids))
    else:
        results = [job(i) for i in ids]
    return dict(zip(ids, results))


def _source(cfg: ExperimentConfig, res: LocalResult) -> np.ndarray:
    return res.momentum if cfg.gp_source == "momentum" else res.last_grad


def init_phase(cfg: ExperimentConfig, data: Optional[Tuple[Dataset, Dataset, Partition]] = None) -> SimState:
    """Every client trains once from the initial model; the top-K by GP seed the first round."""
    train, held_out, partition = data if data is not None else build_data(cfg)
    if partition.num_clients != cfg.num_clients:
        raise ConfigError(f"partition has {partition.num_clients} clients", "num_clients")
    if train.dims != cfg.data.dims or train.class_count != cfg.data.class_count:
        raise ConfigError("dataset shape does not match data.dims / data.class_count", "data")
    clients_data = [ClientData(train.features[a], train.labels[a]) for a in partition.assignment]
    eligible = np.array([len(c) > 0 for c in clients_data])
    for i in np.flatnonzero(~eligible):
        log.warning("client %d has no data and is excluded from selection", i)
    if eligible.sum() < cfg.clients_per_round:
        raise ConfigError(f"only {int(eligible.sum())} clients hold data", "clients_per_round")

    arch = cfg.arch
    w0 = init_params(arch, cfg.seed)
    clients = [ClientState(i, np.zeros(arch.param_count)) for i in range(cfg.num_clients)]
    state = SimState(cfg, held_out, clients_data, partition, w0, clients, None, None,
                     0.0, 0.0, None, {})
    active = [int(i) for i in np.flatnonzero(eligible)]
    results = _train_many(state, active, 0, w0)
    for i, res in results.items():
        clients[i].momentum = res.momentum
    direction = GlobalDirection.mean_of(_source(cfg, results[i]) for i in active)
    gp = np.full(cfg.num_clients, -np.inf)
    for i in active:
        gp[i] = gradient_projection(_source(cfg, results[i]), direction)
        clients[i].gp_value = gp[i]
    c_tilde = np.zeros(cfg.num_clients)
    c_tilde[active] = normalize_gp(gp[active])

    stats = BanditStats.initial(c_tilde, cfg.rounds, cfg.rho, cfg.mean_mode, eligible)
    for i in active:
        clients[i].reward_sum = float(stats.reward_sum[i])
        clients[i].selection_count = 1
        clients[i].last_reward = float(c_tilde[i])
    first = select_top_gp(gp, cfg.clients_per_round, stats.pulls, eligible).selected
    params = fedavg([results[i].params for i in sorted(first)])
    acc, loss = evaluate(params, arch, held_out.features, held_out.labels)

    state.params = params
    state.stats = stats
    state.direction = direction
    state.acc_prev, state.loss_prev = acc, loss
    state.pending = first
    state.init_counters = {
        "train_jobs": len(active),
        "loss_evals": 0,
        "model_downloads": len(active),
        "model_uploads": len(active),
    }
    return state


def _alpha(cfg: ExperimentConfig, t: int) -> float:
    if cfg.alpha_schedule == "constant":
        return cfg.rho
    return alpha_at(t, cfg.rounds, cfg.rho)


def _select(state: SimState, t: int) -> SelectionOutcome:
    cfg = state.cfg
    K = cfg.clients_per_round
    eligible = state.eligible
    if cfg.strategy in ("gpcb", "top_gp") and t == 1 and state.pending is not None:
        return SelectionOutcome(state.pending, state.gp_values)
    if cfg.strategy == "gpcb":
        state.stats.t = t
        return select_gpcb(state.stats, K, _alpha(cfg, t))
    if cfg.strategy == "top_gp":
        return select_top_gp(state.gp_values, K, state.stats.pulls, eligible)
    rng = client_rng(cfg.seed, t, 0, SELECT_STREAM)
    if cfg.strategy == "random":
        return select_random(cfg.num_clients, K, rng, eligible)

    arch = cfg.arch

    def local_loss(i):
        cd = state.clients_data[i]
        return evaluate(state.params, arch, cd.X, cd.y)[1]

    return select_pow_d(cfg.num_clients, cfg.pow_d_candidates, K, local_loss, rng, eligible)


def training_round(state: SimState, t: int) -> RoundRecord:
    """Advance ``state`` by round ``t`` (must be the next round) and return its record."""
    if t != state.t + 1:
        raise ConfigError(f"expected round {state.t + 1}, got {t}")
    cfg = state.cfg
    arch = cfg.arch
    tick = time.perf_counter()

    outcome = _select(state, t)
    selected = tuple(sorted(outcome.selected))
    t_select = time.perf_counter()

    results = _train_many(state, selected, t, state.params)
    t_train = time.perf_counter()

    params = fedavg([results[i].params for i in selected])
    t_agg = time.perf_counter()

    acc, loss = evaluate(params, arch, state.eval_set.features, state.eval_set.labels)
    t_eval = time.perf_counter()

    gp = state.gp_values
    for i in selected:
        res = results[i]
        state.clients[i].momentum = res.momentum
        gp[i] = gradient_projection(_source(cfg, res), state.direction)
        state.clients[i].gp_value = float(gp[i])
    # only this round's participants have fresh GP values to normalise
    c_tilde = np.zeros(cfg.num_clients)
    c_tilde[list(selected)] = normalize_gp(gp[list(selected)])
    rewards = {
        i: adjust_reward(c_tilde[i], acc, state.acc_prev, loss, state.loss_prev, cfg.acc_eq_eps)
        for i in selected
    }
    record_rewards(state.stats, SelectionOutcome(selected, outcome.scores), rewards)
    state.stats.t = t
    u = gpcb_scores(state.stats, _alpha(cfg, t))
    for i in selected:
        cs = state.clients[i]
        cs.reward_sum = float(state.stats.reward_sum[i])
        cs.selection_count = int(state.stats.pulls[i])
        cs.last_reward = rewards[i]
    state.direction = GlobalDirection.mean_of(_source(cfg, results[i]) for i in selected)

    K = len(selected)
    is_pow_d = cfg.strategy == "pow_d"
    counters = {
        "train_jobs": K,
        "loss_evals": len(outcome.candidates) if is_pow_d else 0,
        "model_downloads": len(outcome.candidates) if is_pow_d else K,
        "model_uploads": K,
    }
    per_client = {
        "c": {i: float(gp[i]) for i in selected},
        "c_tilde": {i: float(c_tilde[i]) for i in selected},
        "mu": {i: float(rewards[i]) for i in selected},
        "u": {i: float(u[i]) for i in selected},
        "n": {i: int(state.stats.pulls[i]) for i in selected},
    }
    if is_pow_d:
        per_client["local_loss"] = {i: float(outcome.scores[i]) for i in outcome.candidates}
    timings = {
        "selection": t_select - tick,
        "local_train": t_train - t_select,
        "aggregate": t_agg - t_train,
        "eval": t_eval - t_agg,
    }
    record = RoundRecord(t, selected, acc, loss, per_client, counters, timings,
                         tuple(outcome.candidates))

    state.params = params
    state.acc_prev, state.loss_prev = acc, loss
    state.pending = None
    state.t = t
    state.records.append(record)
    return record


def checkpoint_rounds(T: int) -> Dict[str, int]:
    """Rounds reported at 15%, 50% and 100% of the horizon."""
    return {f"{p}%": max(1, int(round(p / 100 * T))) for p in (15, 50, 100)}


def summarize(records: Sequence[RoundRecord], cfg: ExperimentConfig, init_counters=None) -> dict:
    accs = np.array([r.accuracy for r in records])
    tail = accs[-LAST_ROUNDS:]
    mean = float(tail.mean())
    totals = dict(init_counters or {})
    for r in records:
        for k, v in r.counters.items():
            totals[k] = totals.get(k, 0) + v
    marks = checkpoint_rounds(len(records))
    return {
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "rounds": len(records),
        "final_accuracy": float(accs[-1]),
        "final10_mean": mean,
        "final10_maxdev": float(np.max(np.abs(tail - mean))),
        "accuracy_at": {k: float(accs[v - 1]) for k, v in marks.items()},
        "counters": totals,
        "init_counters": dict(init_counters or {}),
    }


def save_checkpoint(state: SimState, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(state, fh, protocol=pickle.HIGHEST_PROTOCOL)
    tmp.replace(path)


def load_checkpoint(path) -> SimState:
    with open(path, "rb") as fh:
        return pickle.load(fh)


def run_experiment(
    cfg: ExperimentConfig,
    data=None,
    checkpoint_dir=None,
    resume: Optional[SimState] = None,
    stop_after: Optional[int] = None,
) -> ExperimentResult:
    """Run (or continue) ``cfg.rounds`` rounds.

    With ``checkpoint_dir`` and ``cfg.checkpoint_every > 0`` the state is pickled
    every that many rounds; pass the loaded state as ``resume`` to continue.
    ``stop_after`` halts early after that round (used to simulate interruption).
    """
    state = resume if resume is not None else init_phase(cfg, data)
    last = cfg.rounds if stop_after is None else min(stop_after, cfg.rounds)
    every = cfg.checkpoint_every
    for t in range(state.t + 1, last + 1):
        training_round(state, t)
        if checkpoint_dir is not None and every and (t % every == 0 or t == last):
            save_checkpoint(state, Path(checkpoint_dir) / CHECKPOINT_NAME)
    summary = summarize(state.records, cfg, state.init_counters) if state.records else {}
    return ExperimentResult(state.params, list(state.records), summary, state)


def write_jsonl(records: Sequence[RoundRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


CSV_COLUMNS = ("round", "accuracy", "loss", "strategy", "seed")


def write_csv(records: Sequence[RoundRecord], path, strategy: str, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.t, repr(r.accuracy), repr(r.loss), strategy, seed])


def write_timings(records: Sequence[RoundRecord], path) -> None:
    keys = ("selection", "local_train", "aggregate", "eval")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("round",) + keys)
        for r in records:
            w.writerow([r.t] + [f"{r.timings.get(k, 0.0):.6f}" for k in keys])


def oracle_utility(cfg: ExperimentConfig, data=None) -> np.ndarray:
    """Per-client mean clipped reward under full participation (every client, every round)."""
    full = cfg.replace(strategy="random", clients_per_round=cfg.num_clients, checkpoint_every=0)
    res = run_experiment(full, data=data)
    sums = np.zeros(cfg.num_clients)
    counts = np.zeros(cfg.num_clients)
    for r in res.records:
        for i, mu in r.per_client["mu"].items():
            sums[i] += min(max(mu, 0.0), 1.0)
            counts[i] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def proxy_regret(records: Sequence[RoundRecord], utility) -> np.ndarray:
    """Cumulative gap between the utility of the best K clients and of each round's selection."""
    if utility is None:
        raise ConfigError("proxy regret needs a per-client utility for this task")
    utility = np.asarray(utility, dtype=np.float64)
    out = np.empty(len(records))
    total = 0.0
    for k, r in enumerate(records):
        best = np.sort(utility)[::-1][: len(r.selected)].sum()
        total += max(best - utility[list(r.selected)].sum(), 0.0)
        out[k] = total
    return out
