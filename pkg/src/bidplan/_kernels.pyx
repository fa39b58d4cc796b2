# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: sequential auction resolution and dense assignment."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def resolve_auction(double action, double[::1] values, double[::1] prices, double remaining):
    """Resolve one step of second-price auctions in arrival order.

    Returns ``(cost, reward, buy_count)``.
    """
    cdef Py_ssize_t i, n = values.shape[0]
    cdef double cost = 0.0, reward = 0.0, p
    cdef long count = 0
    for i in range(n):
        p = prices[i]
        if action * values[i] >= p and remaining - cost >= p:
            cost += p
            reward += values[i]
            count += 1
    return cost, reward, count


def min_cost_assignment(double[:, ::1] cost):
    """Shortest augmenting path assignment on a square cost matrix.

    Returns ``(col_of_row, total)``.
    """
    cdef Py_ssize_t n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef long[::1] p = np.zeros(n + 1, dtype=np.int_)
    cdef long[::1] way = np.zeros(n + 1, dtype=np.int_)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.intp)
    cdef double total = 0.0
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
        total += cost[p[j] - 1, j - 1]
    return col, total
