"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from fedsel._kernels import _pykernels

try:
    from fedsel._kernels import _ckernels
except ImportError:
    _ckernels = None


def pg_case(clients=20, labels=10, seed=0):
    rng = np.random.default_rng(seed)
    Q = np.ascontiguousarray(rng.dirichlet(np.full(labels, 0.2), size=clients).T)
    d = Q @ rng.uniform(10, 80, clients)
    step = 1.0 / (2 * (np.linalg.norm(Q, 2) ** 2 + 1e-6))
    # tol=0 forces the full iteration budget so both backends do equal work
    return (Q, d, 1e-6, step, 20_000, 0.0)


def bandit_case(arms=10, rounds=2000, reps=100, seed=0):
    rng = np.random.default_rng(seed)
    means = np.linspace(0.1, 0.9, arms)
    rewards = np.ascontiguousarray(np.clip(means + 0.1 * rng.standard_normal((reps, rounds + 1, arms)), 0, 1))
    return (means, rewards, 1, 1.0, True)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    cases = [
        ("pg_least_norm 10x20, 20k iters", "pg_least_norm", pg_case()),
        ("gpcb_runs 10 arms, 2000 rounds, 100 reps", "gpcb_runs", bandit_case()),
    ]
    print(f"{'kernel':44s} {'numpy s':>9s} {'cython s':>9s} {'speedup':>8s}")
    for label, name, case in cases:
        py = best_of(getattr(_pykernels, name), case, args.repeat)
        cy = best_of(getattr(_ckernels, name), case, args.repeat)
        print(f"{label:44s} {py:9.4f} {cy:9.4f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
