"""Time each hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.
"""

import argparse
import timeit

import numpy as np

from dkguide import _kernels
from dkguide.attribution import shapley_weights


def cases(rng):
    j = 12
    table = rng.standard_normal(1 << j)
    w = shapley_weights(j)
    perms = rng.permuted(np.tile(np.arange(8), (2000, 1)), axis=1)
    values = rng.standard_normal((2000, 9))
    d = rng.standard_normal((2000, 8))
    a, b = rng.permutation(50), rng.permutation(50)
    x = rng.standard_normal((128, 8, 8))
    cw, cb = rng.standard_normal((8, 8, 3)), rng.standard_normal(8)
    dout = rng.standard_normal((128, 8, 8))
    return {
        "shapley_from_table J=12": lambda k: k.shapley_from_table(table, j, w),
        "prefix_masks 2000x8": lambda k: k.prefix_masks(perms),
        "permutation_marginals 2000x8": lambda k: k.permutation_marginals(values, perms),
        "scatter_marginal_grad 2000x8": lambda k: k.scatter_marginal_grad(d, perms),
        "concordance_counts n=50": lambda k: k.concordance_counts(a, b),
        "conv1d_forward 128x8x8": lambda k: k.conv1d_forward(x, cw, cb, 1),
        "conv1d_backward 128x8x8": lambda k: k.conv1d_backward(x, cw, dout, 1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    backends = [b for b in (_kernels.NUMPY, _kernels.NUMBA) if b is not None]
    print(f"{'kernel':32s}" + "".join(f"{b.name:>12s}" for b in backends) + "     speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = []
        for b in backends:
            fn(b)  # warm-up, triggers compilation for numba
            t = min(timeit.repeat(lambda: fn(b), repeat=args.repeat, number=args.number))
            times.append(t / args.number * 1e6)
        speed = f"{times[0] / times[1]:10.1f}x" if len(times) == 2 else ""
        print(f"{name:32s}" + "".join(f"{t:10.1f}us" for t in times) + speed)


if __name__ == "__main__":
    main()
