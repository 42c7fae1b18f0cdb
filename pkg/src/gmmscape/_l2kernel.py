"""Compiled pair loop for the mixture L2 objective.

Accumulates the cost and its first two derivatives over all (source, target) component
pairs. Derivative formulas per pair, with ``S = C_a + C_b``, ``d = m_a - mu_b``,
``alpha = S^-1 d``, ``G = alpha alpha^T - S^-1`` and ``l = ln N(d; 0, S)``:

    dl_i      = 1/2 tr(G S_i) - d_i . alpha
    d2l_ij    = 1/2 tr(S^-1 S_j S^-1 S_i) - (d_j - S_j alpha)^T S^-1 (d_i - S_i alpha)
                + 1/2 tr(G S_ij) - d_ij . alpha
    d2(-wN)   = -wN (d2l + dl dl^T)

where ``S_i``, ``d_i`` are first-order and ``S_ij``, ``d_ij`` second-order
changes under the left perturbation ``(exp(omega), v)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_NORM = (2.0 * math.pi) ** -1.5


@njit(cache=True, error_model="numpy")
def _inv3(S, out):
    a, b, c = S[0, 0], S[0, 1], S[0, 2]
    d, e, f = S[1, 0], S[1, 1], S[1, 2]
    g, h, i = S[2, 0], S[2, 1], S[2, 2]
    A = e * i - f * h
    B = f * g - d * i
    C = d * h - e * g
    det = a * A + b * B + c * C
    r = 1.0 / det
    out[0, 0] = A * r
    out[0, 1] = (c * h - b * i) * r
    out[0, 2] = (b * f - c * e) * r
    out[1, 0] = B * r
    out[1, 1] = (a * i - c * g) * r
    out[1, 2] = (c * d - a * f) * r
    out[2, 0] = C * r
    out[2, 1] = (b * g - a * h) * r
    out[2, 2] = (a * e - b * d) * r
    return det


@njit(cache=True, error_model="numpy")
def pair_densities(ws, ms, Cs, wt, mt, Ct):
    """``w_a w_b N(m_a | mu_b, C_a + C_b)`` for every pair, row-major in (a, b)."""
    Ma, Mb = ws.shape[0], wt.shape[0]
    out = np.empty(Ma * Mb)
    S = np.empty((3, 3))
    Si = np.empty((3, 3))
    d = np.empty(3)
    for a in range(Ma):
        for b in range(Mb):
            for i in range(3):
                d[i] = ms[a, i] - mt[b, i]
                for j in range(3):
                    S[i, j] = Cs[a, i, j] + Ct[b, i, j]
            det = _inv3(S, Si)
            q = 0.0
            for i in range(3):
                for j in range(3):
                    q += d[i] * Si[i, j] * d[j]
            out[a * Mb + b] = ws[a] * wt[b] * _NORM * math.exp(-0.5 * q) / math.sqrt(det)
    return out


@njit(cache=True, error_model="numpy")
def _levi(i, j, k):
    return ((i - j) * (j - k) * (k - i)) / 2.0


@njit(cache=True, error_model="numpy")
def derivatives(ws, ms, Cs, wt, mt, Ct, wn, threshold, want_hessian):
    """Gradient and Hessian of ``-sum wn`` at the identity perturbation.

    Pairs with ``wn <= threshold`` are skipped.
    """
    Ma, Mb = ws.shape[0], wt.shape[0]
    grad = np.zeros(6)
    hess = np.zeros((6, 6))
    Wh = np.zeros((3, 3, 3))  # hat(e_i)
    for i in range(3):
        for p in range(3):
            for q in range(3):
                Wh[i, p, q] = -_levi(i, p, q)
    CW = np.empty((3, 3, 3))
    GW = np.empty((3, 3, 3))
    S = np.empty((3, 3))
    Si = np.empty((3, 3))
    G = np.empty((3, 3))
    F = np.empty((3, 3))
    d = np.empty(3)
    al = np.empty(3)
    dd = np.zeros((6, 3))      # d_i
    Sd = np.zeros((3, 3, 3))   # S_i for rotation directions
    K = np.empty((3, 3, 3))
    U = np.zeros((6, 3))
    gl = np.empty(6)
    H = np.empty((6, 6))
    for a in range(Ma):
        m = ms[a]
        C = Cs[a]
        for b in range(Mb):
            w = wn[a * Mb + b]
            if w <= threshold:
                continue
            for i in range(3):
                d[i] = m[i] - mt[b, i]
                for j in range(3):
                    S[i, j] = C[i, j] + Ct[b, i, j]
            _inv3(S, Si)
            for i in range(3):
                al[i] = Si[i, 0] * d[0] + Si[i, 1] * d[1] + Si[i, 2] * d[2]
            for i in range(3):
                for j in range(3):
                    G[i, j] = al[i] * al[j] - Si[i, j]
            # d_i = e_i x m for rotations, e_k for translations
            dd[0, 0], dd[0, 1], dd[0, 2] = 0.0, -m[2], m[1]
            dd[1, 0], dd[1, 1], dd[1, 2] = m[2], 0.0, -m[0]
            dd[2, 0], dd[2, 1], dd[2, 2] = -m[1], m[0], 0.0
            for k in range(3):
                for j in range(3):
                    dd[3 + k, j] = 1.0 if j == k else 0.0
            # S_i = W_i C - C W_i with W_i = hat(e_i), and W_i C = -(C W_i)^T
            for i in range(3):
                for p in range(3):
                    for q in range(3):
                        CW[i, p, q] = C[p, 0] * Wh[i, 0, q] + C[p, 1] * Wh[i, 1, q] + C[p, 2] * Wh[i, 2, q]
            for i in range(3):
                for p in range(3):
                    for q in range(3):
                        Sd[i, p, q] = -CW[i, q, p] - CW[i, p, q]
            for i in range(6):
                s = 0.0
                for j in range(3):
                    s -= dd[i, j] * al[j]
                if i < 3:
                    t = 0.0
                    for p in range(3):
                        for q in range(3):
                            t += G[p, q] * Sd[i, q, p]
                    s += 0.5 * t
                gl[i] = s
            for i in range(6):
                grad[i] -= w * gl[i]
            if not want_hessian:
                continue
            for i in range(3):
                for p in range(3):
                    for q in range(3):
                        K[i, p, q] = Si[p, 0] * Sd[i, 0, q] + Si[p, 1] * Sd[i, 1, q] + Si[p, 2] * Sd[i, 2, q]
            for i in range(6):
                for j in range(3):
                    U[i, j] = dd[i, j]
                if i < 3:
                    for p in range(3):
                        U[i, p] -= Sd[i, p, 0] * al[0] + Sd[i, p, 1] * al[1] + Sd[i, p, 2] * al[2]
            for i in range(6):
                for j in range(i, 6):
                    s = 0.0
                    for p in range(3):
                        for q in range(3):
                            s -= U[j, p] * Si[p, q] * U[i, q]
                    H[i, j] = s
            for i in range(3):
                for p in range(3):
                    for q in range(3):
                        GW[i, p, q] = G[p, 0] * Wh[i, 0, q] + G[p, 1] * Wh[i, 1, q] + G[p, 2] * Wh[i, 2, q]
            for p in range(3):
                for q in range(3):
                    F[p, q] = C[p, 0] * G[0, q] + C[p, 1] * G[1, q] + C[p, 2] * G[2, q]
            trF = F[0, 0] + F[1, 1] + F[2, 2]
            am = al[0] * m[0] + al[1] * m[1] + al[2] * m[2]
            for i in range(3):
                for j in range(i, 3):
                    t = 0.0
                    for p in range(3):
                        for q in range(3):
                            t += K[j, p, q] * K[i, q, p]
                    s = 0.5 * t + 0.5 * (F[i, j] + F[j, i]) - 0.5 * (m[i] * al[j] + al[i] * m[j])
                    if i == j:
                        s += am - trF
                    # tr(G W_i C W_j)
                    e = 0.0
                    for p in range(3):
                        for q in range(3):
                            e += GW[i, p, q] * CW[j, q, p]
                    H[i, j] += s - e
            for i in range(6):
                for j in range(i, 6):
                    hess[i, j] -= w * (H[i, j] + gl[i] * gl[j])
    for i in range(6):
        for j in range(i):
            hess[i, j] = hess[j, i]
    return grad, hess
