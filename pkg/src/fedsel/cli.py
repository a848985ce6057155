"""``fedsel`` command line: run, partition, regret and report subcommands.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from . import __version__, report
from .config import load_config
from .data import partition_stats, write_partition
from .engine import (
    CHECKPOINT_NAME,
    build_data,
    load_checkpoint,
    run_experiment,
    write_csv,
    write_jsonl,
    write_timings,
)
from .errors import ConfigError, FedSelError, PartitionError
from .regret import BanditEnv, bound_check, read_arms, simulate_iid, sublinearity_ratio, write_report

log = logging.getLogger("fedsel")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    started: str
    finished: str
    outputs: List[str]
    version: str = __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load(path, seed=None, strategy=None):
    cfg = load_config(path)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if strategy is not None:
        changes["strategy"] = strategy
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _load(args.config, args.seed, args.strategy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    resume = None
    ckpt = out / CHECKPOINT_NAME
    if args.resume and ckpt.is_file():
        resume = load_checkpoint(ckpt)
        if resume.cfg.digest() != cfg.digest():
            raise ConfigError(f"{ckpt} was written for a different configuration", "resume")
        log.info("resuming after round %d", resume.t)
    result = run_experiment(cfg, checkpoint_dir=out if cfg.checkpoint_every else None, resume=resume)
    files = {
        "rounds": out / report.ROUNDS_FILE,
        "metrics": out / report.METRICS_FILE,
        "timings": out / "timings.csv",
        "summary": out / report.SUMMARY_FILE,
    }
    write_jsonl(result.records, files["rounds"])
    write_csv(result.records, files["metrics"], cfg.strategy, cfg.seed)
    write_timings(result.records, files["timings"])
    summary = dict(result.summary, config_hash=cfg.digest())
    files["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = RunManifest(cfg.digest(), cfg.seed, started, _now(), sorted(p.name for p in files.values()))
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    print(f"{cfg.strategy} seed={cfg.seed} rounds={summary['rounds']} "
          f"final10_mean={summary['final10_mean']:.4f} -> {out}")
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _load(args.config, args.seed)
    try:
        train, _, part = build_data(cfg)
    except PartitionError as exc:
        extra = "" if exc.residual is None else f" (relative residual {exc.residual:.4g})"
        print(f"partition infeasible: {exc}{extra}", file=sys.stderr)
        return EXIT_RUNTIME
    part.validate(train)
    if args.out:
        write_partition(part, args.out)
    if args.stats or not args.out:
        st = partition_stats(part)
        print("clients  samples  size mean  size std  size min  size max  labels mean  labels std")
        print(f"{st.clients:7d}  {st.samples:7d}  {st.mean_size:9.2f}  {st.std_size:8.2f}  "
              f"{st.min_size:8d}  {st.max_size:8d}  {st.mean_labels:11.2f}  {st.std_labels:10.2f}")
        if "residual" in part.info:
            print(f"least-norm relative residual: {part.info['residual']:.3e} "
                  f"(draws={part.info.get('draws')})")
    return EXIT_OK


def cmd_regret(args) -> int:
    if args.arms:
        base = read_arms(args.arms)
        env = BanditEnv(base.means, base.sigmas, args.distribution, args.K, args.seed)
    else:
        env = BanditEnv.spread(args.num_arms, args.low, args.high, args.sigma,
                               distribution=args.distribution, K=args.K, seed=args.seed)
    curve = simulate_iid(env, args.rounds, args.rho, args.replications, args.alpha_schedule)
    rep = bound_check(env, args.rounds, args.replications, args.rho, args.alpha_schedule, curve=curve)
    write_report(rep, args.out)
    print(rep.summary_line())
    if args.rounds >= 2 and args.rounds % 2 == 0:
        print(f"R({args.rounds})/R({args.rounds // 2}) = {sublinearity_ratio(curve, args.rounds // 2):.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = [report.load_run(p) for p in args.runs]
    rows = report.build_rows(runs)
    sys.stdout.write(report.render_markdown(rows))
    if args.out:
        report.write_rows_csv(rows, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fedsel {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--strategy", choices=("gpcb", "random", "pow_d", "top_gp"))
    r.add_argument("--resume", action="store_true", help="continue from a checkpoint in --out")
    r.set_defaults(func=cmd_run)

    pt = sub.add_parser("partition", help="build and inspect the client partition")
    pt.add_argument("config")
    pt.add_argument("--out", help="write the partition file here")
    pt.add_argument("--seed", type=int)
    pt.add_argument("--stats", action="store_true")
    pt.set_defaults(func=cmd_partition)

    g = sub.add_parser("regret", help="IID bandit regret against the theoretical bound")
    g.add_argument("--arms", help="file with one 'mean [sigma]' per line")
    g.add_argument("--num-arms", type=int, default=10)
    g.add_argument("--low", type=float, default=0.1)
    g.add_argument("--high", type=float, default=0.9)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--distribution", choices=("gaussian", "bernoulli"), default="gaussian")
    g.add_argument("--K", type=int, default=1)
    g.add_argument("--rounds", type=int, default=2000)
    g.add_argument("--replications", type=int, default=100)
    g.add_argument("--rho", type=float, default=1.0)
    g.add_argument("--alpha-schedule", choices=("linear", "constant"), default="linear")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="CSV report path")
    g.set_defaults(func=cmd_regret)

    rp = sub.add_parser("report", help="compare finished runs")
    rp.add_argument("runs", nargs="+")
    rp.add_argument("--out", help="also write the table as CSV")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FedSelError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
