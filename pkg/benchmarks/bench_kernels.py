"""Time the compiled kernels against the numpy/Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on identical inputs through both backends; the table shows
the best-of-N wall time and the largest absolute difference in the outputs.
"""
import argparse
import timeit

import numpy as np

from kjepa import _fallback

try:
    from kjepa import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    eps = rng.standard_normal(1280)
    m = rng.standard_normal((32, 32))
    xp = rng.standard_normal((256, 16, 390)).astype(np.float32)
    cols = rng.standard_normal((256, 192, 16, 5)).astype(np.float32)
    h = _fallback.hessenberg(m)
    return [
        ("arma_filter L=1280", "arma_filter", (eps, 0.5, -0.4)),
        ("hessenberg 32x32", "hessenberg", (m,)),
        ("hqr 32x32", "hqr", (h, 3200)),
        ("im2col B=256 C=16 K=5", "im2col", (xp, 5, 2, 193)),
        ("col2im B=256 C=16 K=5", "col2im", (cols, 388, 2)),
    ]


def first(out):
    return out[0] if isinstance(out, tuple) else out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for label, name, inputs in cases(rng):
        py = getattr(_fallback, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{label:<24}{t_py:>12.3f}{'-':>12}{'-':>10}{'-':>14}")
            continue
        cy = getattr(_kernels, name)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        a, b = np.asarray(first(py(*inputs))), np.asarray(first(cy(*inputs)))
        diff = float(np.nanmax(np.abs(a - b))) if a.size else 0.0
        print(f"{label:<24}{t_py:>12.3f}{t_cy:>12.3f}{t_py / t_cy:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
