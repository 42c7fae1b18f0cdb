"""Compiled E+M pass over a sparse (component, point) candidate list.

Pairs are grouped by component: pairs ``ptr[b]:ptr[b+1]`` hold the points
considered for component ``b``. Rows without any candidate are handled by
the caller.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def sparse_em_pass(X, center, ptr, pts, prec, means, logdet, log_w):
    """Returns ``(row_lse, counts, s1, s2)``.

    ``row_lse[n]`` is the log of the summed weighted densities over the
    candidates of point ``n`` (``-inf`` when it has none). ``s1``/``s2`` are
    responsibility-weighted first and second moments of ``X - center``.
    """
    N, D = X.shape
    M = means.shape[0]
    P = pts.shape[0]
    lp = np.empty(P)
    row_max = np.full(N, -np.inf)
    y = np.empty(D)
    for b in range(M):
        for p in range(ptr[b], ptr[b + 1]):
            n = pts[p]
            q = 0.0
            for i in range(D):
                s = 0.0
                for j in range(i + 1):
                    s += prec[b, i, j] * (X[n, j] - means[b, j])
                q += s * s
            v = log_w[b] - 0.5 * (D * _LOG_2PI + q) + logdet[b]
            lp[p] = v
            if v > row_max[n]:
                row_max[n] = v
    row_sum = np.zeros(N)
    for p in range(P):
        e = math.exp(lp[p] - row_max[pts[p]])
        lp[p] = e
        row_sum[pts[p]] += e
    counts = np.zeros(M)
    s1 = np.zeros((M, D))
    s2 = np.zeros((M, D, D))
    for b in range(M):
        for p in range(ptr[b], ptr[b + 1]):
            n = pts[p]
            g = lp[p] / row_sum[n]
            counts[b] += g
            for i in range(D):
                y[i] = X[n, i] - center[i]
            for i in range(D):
                s1[b, i] += g * y[i]
                for j in range(i + 1):
                    s2[b, i, j] += g * y[i] * y[j]
    for b in range(M):
        for i in range(D):
            for j in range(i):
                s2[b, j, i] = s2[b, i, j]
    row_lse = np.empty(N)
    for n in range(N):
        row_lse[n] = math.log(row_sum[n]) + row_max[n] if row_sum[n] > 0 else -np.inf
    return row_lse, counts, s1, s2
