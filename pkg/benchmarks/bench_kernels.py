"""Time the numba and numpy paths of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 64]

The first numba call of each kernel (compilation, or a cache load) is
excluded from the timings.
"""

import argparse
import time

import numpy as np

from concordia import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(batch, rng):
    tiles = rng.integers(0, 256, size=(batch, 128, 128, 3), dtype=np.uint8)
    gray = K.luma_numpy(tiles.astype(np.float64))
    hist = np.bincount(rng.integers(0, 256, 128 * 128), minlength=256).astype(np.int64)
    x = rng.random((batch, 128, 128, 3)).astype(np.float32)
    shifts = rng.uniform(-0.15, 0.15, batch)
    cols = K.im2col_numpy(x, 4, 4, 0)
    return {
        "otsu_scores": ((hist,), K.otsu_scores_numpy, K.otsu_scores_numba),
        "laplacian_variance": ((gray,), K.laplacian_variance_numpy, K.laplacian_variance_numba),
        "ink_fraction": ((tiles,), K.ink_fraction_numpy, K.ink_fraction_numba),
        "im2col k4 s4": ((x, 4, 4, 0), K.im2col_numpy, K.im2col_numba),
        "col2im k4 s4": ((cols, x.shape, 4, 4, 0), K.col2im_numpy, K.col2im_numba),
        "hue_shift": ((x, shifts), K.hue_shift_numpy, K.hue_shift_numba),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  max|diff|")
    for name, (inp, f_np, f_nb) in cases(args.batch, rng).items():
        ref = f_np(*inp)
        got = f_nb(*inp)  # warm-up / compile
        diff = float(np.max(np.abs(np.asarray(ref, np.float64) - np.asarray(got, np.float64))))
        t_np = best_of(lambda: f_np(*inp), args.repeat)
        t_nb = best_of(lambda: f_nb(*inp), args.repeat)
        print(f"{name:<20} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}  {diff:.2e}")


if __name__ == "__main__":
    main()
