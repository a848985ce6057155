"""Pure numpy implementations of the compiled kernels.

Signatures and results match ``_ckernels`` so either can back the public API.
"""

import numpy as np


def pg_least_norm(Q, d, lam, step, max_iter, tol):
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    d = np.ascontiguousarray(d, dtype=np.float64)
    x = np.zeros(Q.shape[1])
    dnorm = np.sqrt(d @ d)
    if dnorm == 0.0:
        return x, 0
    QT = Q.T.copy()
    for k in range(max_iter):
        r = Q @ x - d
        if np.sqrt(r @ r) / dnorm < tol:
            return x, k
        x = np.maximum(x - step * 2.0 * (QT @ r + lam * x), 0.0)
    return x, max_iter


def gpcb_runs(means, rewards, K, rho, linear_alpha):
    """Vectorised over replications: each round is one batched top-K."""
    means = np.asarray(means, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    R, T1, N = rewards.shape
    T = T1 - 1
    oracle = 0.0
    for k in np.argsort(-means, kind="stable")[:K]:
        oracle += means[k]

    ids = np.broadcast_to(np.arange(N), (R, N))
    rows = np.arange(R)[:, None]
    sums = rewards[:, 0, :].copy()
    pulls = np.ones((R, N), dtype=np.int64)
    n_tot = float(N)
    regret = np.empty((R, T))
    nmin = np.empty((R, T), dtype=np.int64)
    nmax = np.empty((R, T), dtype=np.int64)
    for t in range(1, T + 1):
        alpha = rho * (t / T) if linear_alpha else rho
        u = sums / pulls + alpha * np.sqrt(2.0 * np.log(n_tot) / pulls)
        chosen = np.lexsort((ids, pulls, -u), axis=-1)[:, :K]
        picked = np.zeros(R)
        for k in range(K):
            picked += means[chosen[:, k]]
        sums[rows, chosen] += rewards[rows, t, chosen]
        pulls[rows, chosen] += 1
        n_tot += K
        regret[:, t - 1] = oracle - picked
        nmin[:, t - 1] = pulls.min(axis=1)
        nmax[:, t - 1] = pulls.max(axis=1)
    return regret, nmin, nmax, pulls
