"""Time the compiled and pure-NumPy risk-set kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from patentsurv import _kernels
from patentsurv.coxph import _risk_sets, fit_cox
from patentsurv.dataset import DesignMatrix, encode_design
from patentsurv.model_suite import builtin_suite
from patentsurv.simulator import MODEL7_TRUTH, SimConfig, simulate


def cases():
    d = simulate(SimConfig(n=5000, seed=1, true_coefficients=MODEL7_TRUTH))
    yield "model 7, n=5000 (20 distinct times)", encode_design(d, builtin_suite()[6])
    d = simulate(SimConfig(n=2025, seed=1))
    yield "model 1, n=2025", encode_design(d, builtin_suite()[0])
    rng = np.random.default_rng(0)
    n = 5000
    yield "tie-free, n=5000, p=6", DesignMatrix.from_arrays(rng.normal(size=(n, 6)), rng.permutation(n) + 1,
                                                            (rng.random(n) < 0.7).astype(int))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    kernels = {"python": _kernels.python_accumulate}
    if _kernels.compiled_accumulate is not None:
        kernels["cython"] = _kernels.compiled_accumulate
    else:
        print("compiled kernel not built; timing the fallback only")

    print(f"{'case':<38} {'kernel':<8} {'accumulate':>12} {'full fit':>10}")
    for label, m in cases():
        rs = _risk_sets(m)
        eta = np.ascontiguousarray(rs.x @ (np.ones(m.p) * 0.01))
        for name, fn in kernels.items():
            per_call = min(timeit.repeat(lambda: fn(rs.x, eta, rs.events, rs.bounds, True, False),
                                         number=1, repeat=args.repeat))
            _kernels.accumulate = fn
            per_fit = min(timeit.repeat(lambda: fit_cox(m), number=1, repeat=max(3, args.repeat // 5)))
            print(f"{label:<38} {name:<8} {per_call * 1e3:10.3f}ms {per_fit * 1e3:8.1f}ms")


if __name__ == "__main__":
    main()
