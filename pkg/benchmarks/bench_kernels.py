"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from faircl import _pykernels

try:
    from faircl import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _log_probs(rng, T, V):
    x = rng.normal(size=(T, V))
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def cases(rng):
    for T, V, L in [(50, 8, 10), (200, 8, 40), (400, 32, 80)]:
        lp = _log_probs(rng, T, V)
        target = rng.integers(1, V, size=L).astype(np.int64)
        yield f"ctc T={T} V={V} L={L}", "ctc_forward_backward", (lp, target, 0)
    for n in (10, 50, 200):
        a = rng.integers(0, 20, size=n).astype(np.int64)
        b = rng.integers(0, 20, size=n + n // 5).astype(np.int64)
        yield f"edit n={n}", "edit_ops", (a, b)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':<26}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for label, fn, inputs in cases(rng):
        def best(mod):
            f = getattr(mod, fn)
            number = 3
            return min(timeit.repeat(lambda: f(*inputs), number=number, repeat=args.repeat)) / number
        t_py = best(_pykernels)
        if _ckernels is None:
            print(f"{label:<26}{1e3 * t_py:>12.3f}{'n/a':>12}{'':>10}")
            continue
        t_c = best(_ckernels)
        print(f"{label:<26}{1e3 * t_py:>12.3f}{1e3 * t_c:>12.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
