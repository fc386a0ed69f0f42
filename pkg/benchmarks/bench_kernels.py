"""Time the JIT kernels against their pure-numpy twins.

Runs each kernel on tile-sized inputs, checks the two paths agree bit
for bit, and prints a small table. The JIT column is skipped when numba
is not importable.

Usage: python3 benchmarks/bench_kernels.py [--size 640] [--repeats 20]
"""

import argparse
import time

import numpy as np

from landtile import kernels


def best_of(fn, args, repeats):
    """Best wall time in seconds; best-of filters scheduler noise."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pair(name, np_fn, nb_fn, args, repeats, check=None):
    ref = np_fn(*args)
    t_np = best_of(np_fn, args, repeats)
    row = f"{name:<22} {t_np * 1e3:>10.3f}"
    if nb_fn is not None:
        out = nb_fn(*args)
        same = check(ref, out) if check else np.array_equal(ref, out)
        if not same:
            raise AssertionError(f"{name}: paths disagree")
        nb_fn(*args)  # ensure compiled before timing
        t_nb = best_of(nb_fn, args, repeats)
        row += f" {t_nb * 1e3:>10.3f} {t_np / t_nb:>8.1f}x"
    else:
        row += f" {'n/a':>10} {'':>9}"
    print(row)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=640,
                        help="tile edge length (default 640)")
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    n = args.size
    rng = np.random.default_rng(0)
    plane = rng.normal(0, 1, (n, n)).astype(np.float32)
    labels = rng.integers(0, 9, (n, n)).astype(np.uint8)
    big_t = rng.integers(0, 9, (2048, 2048)).astype(np.uint8)
    big_p = rng.integers(0, 9, (2048, 2048)).astype(np.uint8)

    if kernels.USING_NUMBA:
        nb = {"box": kernels.box_mean3_nb,
              "degrade": kernels.degrade_edge_band_nb,
              "confusion": kernels.accumulate_confusion_nb}
    else:
        nb = {"box": None, "degrade": None, "confusion": None}
        print("numba unavailable or disabled; timing numpy path only")

    print(f"inputs: {n}x{n} tile kernels, 2048x2048 confusion, "
          f"best of {args.repeats}")
    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    bench_pair("box_mean3", kernels.box_mean3_np, nb["box"],
               (plane,), args.repeats)
    bench_pair("degrade_edge_band", kernels.degrade_edge_band_np,
               nb["degrade"], (labels, 9, 7, 0, 160, 0.5), args.repeats)

    def conf_np(t, p):
        return kernels.accumulate_confusion_np(
            t, p, 9, np.zeros((9, 9), dtype=np.int64))

    def conf_nb(t, p):
        return kernels.accumulate_confusion_nb(
            t, p, 9, np.zeros((9, 9), dtype=np.int64))

    bench_pair("accumulate_confusion", conf_np,
               conf_nb if kernels.USING_NUMBA else None,
               (big_t, big_p), args.repeats)


if __name__ == "__main__":
    main()
