# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay numerically equivalent to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt

cnp.import_array()


def pg_least_norm(double[:, ::1] Q, double[::1] d, double lam, double step,
                  long max_iter, double tol):
    cdef Py_ssize_t L = Q.shape[0], N = Q.shape[1]
    cdef Py_ssize_t i, l, k
    cdef double s, dnorm = 0.0, rnorm
    x_arr = np.zeros(N, dtype=np.float64)
    r_arr = np.empty(L, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] r = r_arr

    for l in range(L):
        dnorm += d[l] * d[l]
    dnorm = sqrt(dnorm)
    if dnorm == 0.0:
        return x_arr, 0

    for k in range(max_iter):
        rnorm = 0.0
        for l in range(L):
            s = -d[l]
            for i in range(N):
                s += Q[l, i] * x[i]
            r[l] = s
            rnorm += s * s
        if sqrt(rnorm) / dnorm < tol:
            return x_arr, k
        for i in range(N):
            s = lam * x[i]
            for l in range(L):
                s += Q[l, i] * r[l]
            s = x[i] - step * 2.0 * s
            x[i] = s if s > 0.0 else 0.0
    return x_arr, max_iter


cdef inline bint _ranks_before(double ua, long na, Py_ssize_t ia,
                               double ub, long nb, Py_ssize_t ib):
    # higher score first, then fewer pulls, then lower id
    if ua != ub:
        return ua > ub
    if na != nb:
        return na < nb
    return ia < ib


def gpcb_runs(double[::1] means, double[:, :, ::1] rewards, int K, double rho,
              bint linear_alpha):
    """Run GPCB over pre-sampled reward tables, one replication per leading index."""
    cdef Py_ssize_t R = rewards.shape[0]
    cdef Py_ssize_t T = rewards.shape[1] - 1
    cdef Py_ssize_t N = rewards.shape[2]
    cdef Py_ssize_t r, t, i, j, k, best
    cdef double alpha, n_tot, logn, oracle = 0.0

    order = np.argsort(-np.asarray(means), kind="stable")
    for k in range(K):
        oracle += means[order[k]]

    regret_arr = np.empty((R, T), dtype=np.float64)
    nmin_arr = np.empty((R, T), dtype=np.int64)
    nmax_arr = np.empty((R, T), dtype=np.int64)
    pulls_arr = np.empty((R, N), dtype=np.int64)
    cdef double[:, ::1] regret = regret_arr
    cdef long[:, ::1] nmin = nmin_arr
    cdef long[:, ::1] nmax = nmax_arr
    cdef long[:, ::1] pulls_out = pulls_arr

    sums_arr = np.empty(N, dtype=np.float64)
    pulls_arr1 = np.empty(N, dtype=np.int64)
    u_arr = np.empty(N, dtype=np.float64)
    taken_arr = np.empty(N, dtype=np.uint8)
    chosen_arr = np.empty(K, dtype=np.intp)
    cdef double[::1] sums = sums_arr
    cdef long[::1] n_i = pulls_arr1
    cdef double[::1] u = u_arr
    cdef unsigned char[::1] taken = taken_arr
    cdef Py_ssize_t[::1] chosen = chosen_arr
    cdef double picked
    cdef long lo, hi

    for r in range(R):
        for i in range(N):
            sums[i] = rewards[r, 0, i]
            n_i[i] = 1
        n_tot = <double>N
        for t in range(1, T + 1):
            alpha = rho * (<double>t / <double>T) if linear_alpha else rho
            logn = log(n_tot)
            for i in range(N):
                u[i] = sums[i] / <double>n_i[i] + alpha * sqrt(2.0 * logn / <double>n_i[i])
                taken[i] = 0
            for k in range(K):
                best = -1
                for i in range(N):
                    if taken[i]:
                        continue
                    if best < 0 or _ranks_before(u[i], n_i[i], i, u[best], n_i[best], best):
                        best = i
                taken[best] = 1
                chosen[k] = best
            picked = 0.0
            for k in range(K):
                j = chosen[k]
                picked += means[j]
                sums[j] += rewards[r, t, j]
                n_i[j] += 1
            n_tot += K
            regret[r, t - 1] = oracle - picked
            lo = n_i[0]
            hi = n_i[0]
            for i in range(1, N):
                if n_i[i] < lo:
                    lo = n_i[i]
                if n_i[i] > hi:
                    hi = n_i[i]
            nmin[r, t - 1] = lo
            nmax[r, t - 1] = hi
        for i in range(N):
            pulls_out[r, i] = n_i[i]
    return regret_arr, nmin_arr, nmax_arr, pulls_arr
