"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it was built; set ``BIDPLAN_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("BIDPLAN_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def resolve_auction(action, values, prices, remaining):
    """Win every impression with ``action * value >= price`` that is still affordable.

    Impressions are processed in arrival order and the winner pays the market
    price. Returns ``(cost, reward, buy_count)``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    prices = np.ascontiguousarray(prices, dtype=np.float64)
    return _impl.resolve_auction(float(action), values, prices, float(remaining))


def min_cost_assignment(cost):
    """Exact minimum-cost perfect matching for a square matrix.

    Returns ``(col_of_row, total_cost)``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.shape[0] == 0:
        return np.empty(0, dtype=np.intp), 0.0
    return _impl.min_cost_assignment(cost)
