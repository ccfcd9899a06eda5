"""Benchmark the accelerated kernel lane against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--repeat N]

Times the recurrent-cell rollout (forward, backward, inference) and the
power-of-two FFT core in both lanes. Run it with ADTP_NUMBA unset; the
script reaches both implementations directly, so no environment juggling
is needed. Compilation happens during warm-up and is not timed.
"""

import argparse
import time

import numpy as np

from adtp import _kernels


def timeit(fn, repeat):
    fn()  # warm-up (and JIT compilation for the numba lane)
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def lstm_case(L=256, w=30, h=24, seed=0):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((h, h + w)) * 0.2 for _ in range(4)]
    biases = [rng.standard_normal(h) * 0.1 for _ in range(4)]
    wy = rng.standard_normal(h)
    by = 0.1
    xs = rng.uniform(4, 6, (L, w))
    z = np.zeros(h)
    dy = rng.standard_normal(L)
    return mats, biases, wy, by, xs, z, dy


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    lanes = [("numpy", _kernels._lstm_seq_forward_numpy,
              _kernels._lstm_seq_backward_numpy,
              _kernels._lstm_seq_predict_numpy)]
    if _kernels.USING_NUMBA:
        lanes.append(("numba", _kernels._lstm_seq_forward_numba,
                      _kernels._lstm_seq_backward_numba,
                      _kernels._lstm_seq_predict_numba))
    else:
        print("numba unavailable or disabled; timing the numpy lane only")

    mats, biases, wy, by, xs, z, dy = lstm_case()
    caches = lanes[0][1](*mats, *biases, wy, by, xs, z, z)
    A, CT, GU, GF, GO, C, TC, H, _ = caches

    results = {}
    print(f"rollout of {xs.shape[0]} steps, window {xs.shape[1]}, "
          f"hidden {z.shape[0]}")
    for name, fwd, bwd, pred in lanes:
        t_f = timeit(lambda: fwd(*mats, *biases, wy, by, xs, z, z),
                     args.repeat)
        t_b = timeit(lambda: bwd(*mats, wy, z, A, CT, GU, GF, GO, C, TC,
                                 H, dy), args.repeat)
        t_p = timeit(lambda: pred(*mats, *biases, wy, by, xs, z, z),
                     args.repeat)
        results[name] = (t_f, t_b, t_p)
        print(f"  {name:6s} forward {t_f * 1e3:8.3f} ms   "
              f"backward {t_b * 1e3:8.3f} ms   inference {t_p * 1e3:8.3f} ms")

    rng = np.random.default_rng(1)
    data = rng.standard_normal((512, 64)) + 1j * rng.standard_normal((512, 64))
    rev, tw = _kernels._tables(64)
    fft_lanes = [("numpy", lambda: _kernels._fft_pow2_many_numpy(
        data.astype(np.complex128)[:, rev], rev, tw))]
    if _kernels.USING_NUMBA:
        fft_lanes.append(("numba", lambda: _kernels._fft_pow2_many_numba(
            data.astype(np.complex128), rev, tw)))
    print("batched FFT, 512 rows of length 64")
    fft_results = {}
    for name, fn in fft_lanes:
        t = timeit(fn, args.repeat)
        fft_results[name] = t
        print(f"  {name:6s} {t * 1e3:8.3f} ms")

    if _kernels.USING_NUMBA:
        f_np, b_np, p_np = results["numpy"]
        f_nb, b_nb, p_nb = results["numba"]
        print(f"speedup numba vs numpy: forward {f_np / f_nb:.1f}x, "
              f"backward {b_np / b_nb:.1f}x, inference {p_np / p_nb:.1f}x, "
              f"fft {fft_results['numpy'] / fft_results['numba']:.1f}x")


if __name__ == "__main__":
    main()
