"""Time the compiled kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Also checks that both backends return identical arrays for each input.
"""
import argparse
import timeit

import numpy as np

from widr import kernels


def cases(scale: float, rng: np.random.Generator):
    n = max(1, int(32 * scale))
    x = rng.normal(size=(n, 16, 32, 32))
    cols = kernels.py_im2col(x, 3, 2, 1)
    feats = rng.normal(size=(max(1, int(4000 * scale)), 64))
    cents = rng.normal(size=(8, 64))
    labels = kernels.py_assign_nearest(feats, cents)[0]
    return {
        "im2col": (lambda m: m.im2col(x, 3, 2, 1), lambda: kernels.py_im2col(x, 3, 2, 1)),
        "col2im": (
            lambda m: m.col2im(cols, *x.shape, 3, 2, 1),
            lambda: kernels.py_col2im(cols, x.shape, 3, 2, 1),
        ),
        "assign_nearest": (
            lambda m: m.assign_nearest(feats, cents),
            lambda: kernels.py_assign_nearest(feats, cents),
        ),
        "vlad_accumulate": (
            lambda m: m.vlad_accumulate(feats, cents, labels),
            lambda: kernels.py_vlad_accumulate(feats, cents, labels),
        ),
    }


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiplies input sizes")
    args = parser.parse_args()
    ext = kernels._ext
    if ext is None:
        print("compiled backend unavailable; timing the numpy fallback only")
    print(f"{'kernel':<16} {'python ms':>10} {'cython ms':>10} {'speedup':>8}  identical")
    for name, (compiled, fallback) in cases(args.scale, np.random.default_rng(0)).items():
        t_py = best_of(fallback, args.repeat) * 1e3
        if ext is None:
            print(f"{name:<16} {t_py:>10.2f} {'-':>10} {'-':>8}  -")
            continue
        t_cy = best_of(lambda: compiled(ext), args.repeat) * 1e3
        a, b = compiled(ext), fallback()
        same = all(np.array_equal(u, v) for u, v in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        print(f"{name:<16} {t_py:>10.2f} {t_cy:>10.2f} {t_py / t_cy:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
