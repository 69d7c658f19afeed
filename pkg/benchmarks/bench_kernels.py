"""Compare the compiled and pure-numpy shape-function kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 200]

Prints microseconds per call for one MLP forward + backward pass at several
batch sizes and for one Adam update, plus the largest absolute difference
between the two backends' outputs.
"""
import argparse
import timeit

import numpy as np

from shares import _kernels_py as py
from shares.evaluator import DEFAULT_WIDTHS, n_mlp_params

try:
    from shares import _kernels as cy
except ImportError:  # extension not built
    cy = None


def fwd_bwd(mod, params, widths, x):
    y, acts = mod.mlp_forward(params, widths, x)
    return mod.mlp_backward(params, widths, acts, np.ones_like(y))


def per_call_us(fn, repeat):
    best = min(timeit.repeat(fn, number=repeat, repeat=3))
    return 1e6 * best / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 1000, 4096])
    args = ap.parse_args()

    widths = DEFAULT_WIDTHS
    rng = np.random.default_rng(0)
    params = rng.uniform(-0.5, 0.5, n_mlp_params(widths))
    backends = [("numpy", py)] + ([("cython", cy)] if cy is not None else [])
    if cy is None:
        print("compiled extension not available; timing the numpy kernels only")

    print(f"{'kernel':<24}" + "".join(f"{name:>12}" for name, _ in backends)
          + ("   speedup   max|diff|" if cy is not None else ""))
    for n in args.sizes:
        x = rng.normal(size=n)
        reps = max(5, args.repeat * 50 // n)
        times = [per_call_us(lambda m=m: fwd_bwd(m, params, widths, x), reps) for _, m in backends]
        line = f"{'fwd+bwd N=' + str(n):<24}" + "".join(f"{t:12.1f}" for t in times)
        if cy is not None:
            gx_p, gp_p = fwd_bwd(py, params, widths, x)
            gx_c, gp_c = fwd_bwd(cy, params, widths, x)
            diff = max(np.abs(gx_p - gx_c).max(), np.abs(gp_p - gp_c).max())
            line += f"{times[0] / times[1]:10.2f}x {diff:11.1e}"
        print(line)

    n_params = 3 * n_mlp_params(widths)
    grad = rng.normal(size=n_params)

    def adam(mod):
        p = np.zeros(n_params)
        m = np.zeros(n_params)
        v = np.zeros(n_params)
        return lambda: mod.adam_step(p, grad, m, v, 1, 1e-2, 0.9, 0.999, 1e-8, 1e-4)

    times = [per_call_us(adam(m), args.repeat * 10) for _, m in backends]
    line = f"{'adam (3 shapes)':<24}" + "".join(f"{t:12.1f}" for t in times)
    if cy is not None:
        line += f"{times[0] / times[1]:10.2f}x"
    print(line)


if __name__ == "__main__":
    main()
