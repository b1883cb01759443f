"""Compare the numpy and numba conv1d kernels on training-sized shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from corenet.autodiff import kernels

SHAPES = [
    # (batch, in_channels, length, out_channels, kernel, stride, padding)
    (64, 6, 1024, 8, 3, 2, 1),
    (64, 24, 512, 8, 3, 2, 1),
    (64, 48, 256, 32, 3, 2, 1),
    (64, 288, 32, 96, 3, 2, 1),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"{'shape':<34}" + "".join(f"{b + ' fwd/gi/gw (ms)':>30}" for b in backends))
    for b, c, length, o, k, s, p in SHAPES:
        x = rng.standard_normal((b, c, length)).astype(np.float32)
        w = rng.standard_normal((o, c, k)).astype(np.float32)
        lout = kernels.conv_output_length(length, k, s, p)
        g = rng.standard_normal((b, o, lout)).astype(np.float32)
        row = f"{str((b, c, length, o, k, s)):<34}"
        for name in backends:
            kernels.set_backend(name)
            kernels.conv1d_forward(x, w, s, p)  # warm-up / compile
            t = [
                best_of(lambda: kernels.conv1d_forward(x, w, s, p), args.repeat),
                best_of(lambda: kernels.conv1d_grad_input(g, w, s, p, length), args.repeat),
                best_of(lambda: kernels.conv1d_grad_weight(g, x, k, s, p), args.repeat),
            ]
            row += f"{' / '.join(f'{1e3 * v:7.2f}' for v in t):>30}"
        print(row)


if __name__ == "__main__":
    main()
