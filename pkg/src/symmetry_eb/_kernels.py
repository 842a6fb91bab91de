"""Fused loops for the array-model LSE-hat sums.

Each cell needs a log-sum-exp over ``K+1`` values for every ``(k1, k2)``
pair.  Vectorized NumPy materializes several arrays of that size; these
loops keep the inner ``k3`` values in registers instead.  Summation order
is fixed (cells, then pairs, then ``k3``), so results are reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def shared_lse(x, tau, G):
    """``lse[c, q] = log sum_k exp(-tau_c/2 (x_c - G[q, k])^2)`` (no ``-log(K+1)``)."""
    C = x.shape[0]
    Q, K1 = G.shape
    out = np.empty((C, Q))
    a = np.empty(K1)
    for c in range(C):
        xc = x[c]
        h = -0.5 * tau[c]
        for q in range(Q):
            m = -np.inf
            for k in range(K1):
                r = xc - G[q, k]
                a[k] = h * r * r
                if a[k] > m:
                    m = a[k]
            s = 0.0
            for k in range(K1):
                s += math.exp(a[k] - m)
            out[c, q] = m + math.log(s)
    return out


@njit(cache=True)
def shared_objective_grad(x, tau, G, om):
    """Weighted LSE sum ``sum_cq om[c, q] lse[c, q]`` and its gradient in ``G``."""
    C = x.shape[0]
    Q, K1 = G.shape
    up = np.zeros((Q, K1))
    a = np.empty(K1)
    r = np.empty(K1)
    total = 0.0
    for c in range(C):
        xc = x[c]
        tc = tau[c]
        h = -0.5 * tc
        for q in range(Q):
            w = om[c, q]
            m = -np.inf
            for k in range(K1):
                r[k] = xc - G[q, k]
                a[k] = h * r[k] * r[k]
                if a[k] > m:
                    m = a[k]
            s = 0.0
            for k in range(K1):
                a[k] = math.exp(a[k] - m)
                s += a[k]
            total += w * (m + math.log(s))
            if w != 0.0:
                f = w * tc / s
                for k in range(K1):
                    up[q, k] += f * a[k] * r[k]
    return total, up


@njit(cache=True)
def percell_objective_grad(x, tau, G, om):
    """As ``shared_objective_grad`` with a separate table ``G[c, q, k]`` per cell.

    Returns the weighted sum and ``d/dG`` with the shape of ``G``.
    """
    C, Q, K1 = G.shape
    up = np.empty((C, Q, K1))
    a = np.empty(K1)
    total = 0.0
    for c in range(C):
        xc = x[c]
        tc = tau[c]
        h = -0.5 * tc
        for q in range(Q):
            m = -np.inf
            for k in range(K1):
                r = xc - G[c, q, k]
                a[k] = h * r * r
                if a[k] > m:
                    m = a[k]
            s = 0.0
            for k in range(K1):
                a[k] = math.exp(a[k] - m)
                s += a[k]
            w = om[c, q]
            total += w * (m + math.log(s))
            f = w * tc / s
            for k in range(K1):
                up[c, q, k] = f * a[k] * (xc - G[c, q, k])
    return total, up
