"""Compiled sequential kernels.

Every kernel evaluates the ground distance as ``sqrt(dx*dx + dy*dy)`` in this
exact operation order. The wavefront engine repeats the same arithmetic in
Python so parallel and sequential results agree bit for bit.
"""

import math

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, nogil=True, inline="always")
def _d(ax, ay, bx, by):
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True, nogil=True)
def dtw(P, Q):
    n, m = P.shape[0], Q.shape[0]
    prev = np.full(m + 1, INF)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = INF
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            cur[j] = d + min(prev[j - 1], prev[j], cur[j - 1])
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def frechet(P, Q):
    n, m = P.shape[0], Q.shape[0]
    prev = np.full(m + 1, INF)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = INF
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            cur[j] = max(d, min(prev[j - 1], prev[j], cur[j - 1]))
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def erp(P, Q, gx, gy):
    n, m = P.shape[0], Q.shape[0]
    prev = np.empty(m + 1)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for j in range(1, m + 1):
        prev[j] = prev[j - 1] + _d(Q[j - 1, 0], Q[j - 1, 1], gx, gy)
    for i in range(1, n + 1):
        gp = _d(P[i - 1, 0], P[i - 1, 1], gx, gy)
        cur[0] = prev[0] + gp
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            gq = _d(Q[j - 1, 0], Q[j - 1, 1], gx, gy)
            cur[j] = min(prev[j - 1] + d, prev[j] + gp, cur[j - 1] + gq)
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def edr(P, Q, eps):
    n, m = P.shape[0], Q.shape[0]
    prev = np.empty(m + 1)
    cur = np.empty(m + 1)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            sub = 0.0 if d <= eps else 1.0
            cur[j] = min(prev[j - 1] + sub, prev[j] + 1.0, cur[j - 1] + 1.0)
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def stedr(P, Q, tp, tq, eps, eps_t):
    n, m = P.shape[0], Q.shape[0]
    prev = np.empty(m + 1)
    cur = np.empty(m + 1)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            sub = 0.0 if (d <= eps and abs(tp[i - 1] - tq[j - 1]) <= eps_t) else 1.0
            cur[j] = min(prev[j - 1] + sub, prev[j] + 1.0, cur[j - 1] + 1.0)
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def lcss(P, Q, eps):
    n, m = P.shape[0], Q.shape[0]
    prev = np.zeros(m + 1)
    cur = np.zeros(m + 1)
    for i in range(1, n + 1):
        cur[0] = 0.0
        for j in range(1, m + 1):
            d = _d(P[i - 1, 0], P[i - 1, 1], Q[j - 1, 0], Q[j - 1, 1])
            if d <= eps:
                cur[j] = prev[j - 1] + 1.0
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True, nogil=True)
def nearest_distances(P, Q):
    """Per-point nearest distances in both directions.

    Returns ``(row_min, col_min)`` where ``row_min[i]`` is the distance from
    ``P[i]`` to its nearest point in ``Q`` and ``col_min[j]`` the reverse.
    """
    n, m = P.shape[0], Q.shape[0]
    row_min = np.full(n, INF)
    col_min = np.full(m, INF)
    for i in range(n):
        for j in range(m):
            d = _d(P[i, 0], P[i, 1], Q[j, 0], Q[j, 1])
            if d < row_min[i]:
                row_min[i] = d
            if d < col_min[j]:
                col_min[j] = d
    return row_min, col_min


@njit(cache=True, nogil=True)
def hausdorff(P, Q):
    n, m = P.shape[0], Q.shape[0]
    col_min = np.full(m, INF)
    best = 0.0
    for i in range(n):
        rmin = INF
        for j in range(m):
            d = _d(P[i, 0], P[i, 1], Q[j, 0], Q[j, 1])
            if d < rmin:
                rmin = d
            if d < col_min[j]:
                col_min[j] = d
        if rmin > best:
            best = rmin
    for j in range(m):
        if col_min[j] > best:
            best = col_min[j]
    return best


def warm_up():
    """Compile (or load from cache) every kernel before workers fork."""
    P = np.zeros((2, 2))
    t = np.zeros(2)
    dtw(P, P)
    frechet(P, P)
    erp(P, P, 0.0, 0.0)
    edr(P, P, 0.0)
    stedr(P, P, t, t, 0.0, 0.0)
    lcss(P, P, 0.0)
    nearest_distances(P, P)
    hausdorff(P, P)
