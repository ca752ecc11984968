"""Time the numba and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 20]

JIT compilation happens in a warm-up call and is reported separately.
"""
import argparse
import time

import numpy as np

from transfuse import kernels
from transfuse.destruct import bezier_map_from_points, gaussian_kernel1d


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    img = rng.random((args.size, args.size))
    blur = gaussian_kernel1d(3.0)
    window = np.exp(-np.arange(-5, 6) ** 2 / 4.5)
    window /= window.sum()
    lut = bezier_map_from_points((0.2, 0.7), (0.6, 0.3)).lut

    cases = {
        "gaussian blur (reflect)": lambda k: k.separable_filter(img, blur, kernels.MODE_REFLECT),
        "ssim window (valid)": lambda k: k.separable_filter(img, window, kernels.MODE_VALID),
        "bezier lut": lambda k: k.apply_lut(img, lut),
        "sobel": lambda k: k.sobel(img),
    }
    if kernels.numba_kernels is None:
        print("numba not installed; only the numpy backend is available")
        return 1
    t = time.perf_counter()
    for case in cases.values():
        case(kernels.numba_kernels)
    print(f"numba JIT warm-up: {time.perf_counter() - t:.3f}s  (image {args.size}x{args.size})")
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, case in cases.items():
        np.testing.assert_allclose(case(kernels.numba_kernels), case(kernels.numpy_kernels), atol=1e-9)
        t_np = best_of(lambda: case(kernels.numpy_kernels), args.repeat)
        t_nb = best_of(lambda: case(kernels.numba_kernels), args.repeat)
        print(f"{name:<26}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
