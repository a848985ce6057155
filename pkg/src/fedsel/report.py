"""Cross-run comparison tables built from run directories written by ``fedsel run``."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .engine import LAST_ROUNDS, checkpoint_rounds
from .errors import ConfigError

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
ROUNDS_FILE = "rounds.jsonl"
SUMMARY_FILE = "summary.json"
COST_KEYS = ("train_jobs", "loss_evals", "model_downloads", "model_uploads")


@dataclass
class RunData:
    path: Path
    strategy: str
    seed: int
    accuracy: np.ndarray
    counters: List[Dict[str, int]]
    init_counters: Dict[str, int] = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return self.accuracy.size


def load_run(path) -> RunData:
    path = Path(path)
    metrics = path / METRICS_FILE
    if not metrics.is_file():
        raise ConfigError(f"{path} has no {METRICS_FILE}")
    with open(metrics, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{metrics} has no rounds")
    acc = np.array([float(r["accuracy"]) for r in rows])
    counters = []
    if (path / ROUNDS_FILE).is_file():
        with open(path / ROUNDS_FILE) as fh:
            counters = [json.loads(line)["counters"] for line in fh if line.strip()]
    init = {}
    if (path / SUMMARY_FILE).is_file():
        init = json.loads((path / SUMMARY_FILE).read_text()).get("init_counters", {})
    return RunData(path, rows[0]["strategy"], int(rows[0]["seed"]), acc, counters, init)


@dataclass(frozen=True)
class ReportRow:
    label: str
    strategy: str
    seed: int
    at: Dict[str, float]
    final_mean: float
    final_maxdev: float
    costs: Dict[str, int]


def final_window(acc: np.ndarray, last: int = LAST_ROUNDS):
    """Mean of the last ``last`` accuracies and the largest deviation from it."""
    tail = np.asarray(acc, dtype=np.float64)[-last:]
    mean = float(tail.mean())
    return mean, float(np.max(np.abs(tail - mean)))


def build_rows(runs: Sequence[RunData]) -> List[ReportRow]:
    """One row per run, all truncated to the shortest horizon."""
    if not runs:
        raise ConfigError("no runs to report")
    T = min(r.rounds for r in runs)
    if any(r.rounds != T for r in runs):
        log.warning("runs have different horizons %s; aligning on T=%d",
                    sorted({r.rounds for r in runs}), T)
    marks = checkpoint_rounds(T)
    rows = []
    for r in runs:
        acc = r.accuracy[:T]
        mean, dev = final_window(acc)
        costs = {k: int(r.init_counters.get(k, 0)) for k in COST_KEYS}
        for c in r.counters[:T]:
            for k in COST_KEYS:
                costs[k] += int(c.get(k, 0))
        rows.append(ReportRow(r.path.name, r.strategy, r.seed,
                              {k: float(acc[v - 1]) for k, v in marks.items()}, mean, dev, costs))
    return rows


def cost_totals(rows: Sequence[ReportRow]) -> Dict[str, Dict[str, int]]:
    out: Dict[str, Dict[str, int]] = {}
    for row in rows:
        agg = out.setdefault(row.strategy, {k: 0 for k in COST_KEYS})
        for k in COST_KEYS:
            agg[k] += row.costs[k]
    return dict(sorted(out.items()))


def render_markdown(rows: Sequence[ReportRow]) -> str:
    marks = list(rows[0].at)
    head = ["run", "strategy", "seed", *marks, "final-10 mean ± maxdev"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r.label, r.strategy, str(r.seed), *(f"{r.at[m]:.4f}" for m in marks),
                 f"{r.final_mean:.4f} ± {r.final_maxdev:.4f}"]
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "| strategy | " + " | ".join(COST_KEYS) + " |", "|" + "---|" * (len(COST_KEYS) + 1)]
    for strategy, agg in cost_totals(rows).items():
        lines.append(f"| {strategy} | " + " | ".join(str(agg[k]) for k in COST_KEYS) + " |")
    return "\n".join(lines) + "\n"


def write_rows_csv(rows: Sequence[ReportRow], path) -> None:
    marks = list(rows[0].at)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "strategy", "seed", *(f"acc_{m.rstrip('%')}pct" for m in marks),
                    "final10_mean", "final10_maxdev", *COST_KEYS])
        for r in rows:
            w.writerow([r.label, r.strategy, r.seed, *(repr(r.at[m]) for m in marks),
                        repr(r.final_mean), repr(r.final_maxdev), *(r.costs[k] for k in COST_KEYS)])
