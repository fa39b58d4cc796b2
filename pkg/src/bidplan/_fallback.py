"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built.
"""

import numpy as np


def resolve_auction(action, values, prices, remaining):
    wins = action * values >= prices
    won_prices = prices[wins]
    if won_prices.size == 0:
        return 0.0, 0.0, 0
    # cumsum adds sequentially, matching the compiled loop bit for bit
    spent = np.cumsum(won_prices)
    if spent[-1] <= remaining * (1.0 - 1e-12):
        return float(spent[-1]), float(np.cumsum(values[wins])[-1]), int(won_prices.size)
    cost = 0.0
    reward = 0.0
    count = 0
    for v, p in zip(values[wins].tolist(), won_prices.tolist()):
        if remaining - cost >= p:
            cost += p
            reward += v
            count += 1
    return cost, reward, count


def min_cost_assignment(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    rows = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
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
    total = 0.0
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
        total += rows[p[j] - 1][j - 1]
    return col, total
