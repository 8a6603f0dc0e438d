"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from clustergof import _pykernels as py

try:
    from clustergof import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def cases(rng):
    n, d, K = 1000, 6, 3
    X = rng.standard_normal((n, d))
    means = rng.standard_normal((K, d))
    var = rng.uniform(0.5, 2.0, (K, d))
    logpi = np.log(np.full(K, 1.0 / K))
    L = py.gauss_diag_log_joint(X, means, var, logpi)
    A = rng.dirichlet(np.ones(K), size=n)
    exps = np.array([[1, 0, 0], [0, 1, 0], [2, 0, 0], [1, 1, 0], [0, 2, 0]], dtype=np.int64)
    coefs = np.array([1.0, 1.0, 1.0, 2.0, 1.0])
    Psi = np.ascontiguousarray(rng.standard_normal((250, 5)) + 0.05)
    return {
        "gauss_diag_log_joint n=1000 d=6 K=3": ("gauss_diag_log_joint", (X, means, var, logpi)),
        "normalize_log_rows n=1000 K=3": ("normalize_log_rows", (L,)),
        "bernstein_eval n=1000 p=5": ("bernstein_eval", (A, exps, coefs)),
        "el_dual_newton n_b=250 p=5": ("el_dual_newton", (Psi, 1e-10, 100)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python us':>12s} {'compiled us':>12s} {'speedup':>8s} {'max diff':>10s}")
    for label, (name, inputs) in cases(rng).items():
        f_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: f_py(*inputs), number=1, repeat=args.repeat)) * 1e6
        if cy is None:
            print(f"{label:40s} {t_py:12.1f} {'n/a':>12s}")
            continue
        f_cy = getattr(cy, name)
        t_cy = min(timeit.repeat(lambda: f_cy(*inputs), number=1, repeat=args.repeat)) * 1e6
        a, b = f_py(*inputs), f_cy(*inputs)
        a = a[0] if isinstance(a, tuple) else a
        b = b[0] if isinstance(b, tuple) else b
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{label:40s} {t_py:12.1f} {t_cy:12.1f} {t_py / t_cy:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
