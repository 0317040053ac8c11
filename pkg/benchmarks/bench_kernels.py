"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N time for each backend and the
speedup. Backends that are not importable are reported as missing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from polypwsi import kernels
from polypwsi.evaluation import _log_binom_coefficients


def cases(rng):
    # Shapes follow a training batch of 32 conformed 24x24 crops.
    xp = rng.normal(size=(32, 16, 26, 26))
    cols = rng.normal(size=(32 * 24 * 24, 16 * 9))
    img = rng.random((512, 512, 3))
    coef = _log_binom_coefficients(239)
    return {
        "im2col 3x3 s1": lambda b: b.im2col(xp, 3, 1, 24, 24),
        "im2col 3x3 s2": lambda b: b.im2col(xp, 3, 2, 12, 12),
        "col2im 3x3 s1": lambda b: b.col2im(cols, 32, 16, 26, 26, 3, 1, 24, 24),
        "resize 512->384": lambda b: b.resize_bilinear(img, 384, 384),
        "binomial tail n=239": lambda b: [b.binom_upper_tail(coef, k, 239, 0.9) for k in range(240)],
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is reported)")
    args = parser.parse_args(argv)

    available = kernels.backends()
    names = ("python", "compiled")
    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'kernel':<22}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name in names:
            if name in available:
                times[name] = min(timeit.repeat(lambda: fn(available[name]), number=1, repeat=args.repeat))
        cells = "".join(f"{1e3 * times[n]:>16.3f}" if n in times else f"{'missing':>16}" for n in names)
        speedup = f"{times['python'] / times['compiled']:>9.1f}x" if len(times) == 2 else f"{'-':>10}"
        print(f"{label:<22}{cells}{speedup}")


if __name__ == "__main__":
    main()
