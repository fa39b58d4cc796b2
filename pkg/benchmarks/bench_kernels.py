"""Compiled vs pure-Python kernels: auction resolution and exact assignment.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from bidplan import _fallback, kernels

try:
    from bidplan import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    values = rng.uniform(0, 1, 300)
    prices = rng.lognormal(-0.5, 0.6, 300)
    for n in (32, 64, 128):
        cost = rng.uniform(0, 1, (n, n))
        yield f"assignment n={n}", "min_cost_assignment", (cost,)
    yield "auction 300 impressions", "resolve_auction", (1.2, values, prices, 1e9)
    yield "auction, budget binding", "resolve_auction", (1.2, values, prices, 5.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'case':<28}{'python':>12}{'cython':>12}{'speedup':>10}")
    for label, fn, call_args in cases(rng):
        py = getattr(_fallback, fn)
        number = 3 if fn == "min_cost_assignment" else 200
        t_py = min(timeit.repeat(lambda: py(*call_args), number=number, repeat=args.repeat)) / number
        if _kernels is None:
            print(f"{label:<28}{t_py * 1e6:>10.1f}us{'n/a':>12}{'':>10}")
            continue
        cy = getattr(_kernels, fn)
        assert np.allclose(py(*call_args)[-1], cy(*call_args)[-1])
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=number, repeat=args.repeat)) / number
        print(f"{label:<28}{t_py * 1e6:>10.1f}us{t_cy * 1e6:>10.1f}us{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
