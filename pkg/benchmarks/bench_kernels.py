"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel: fallback time, compiled time, speedup.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from airtemp import _kernels_py

try:
    from airtemp import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    x = rng.standard_normal((64, 64, 64)).astype(np.float32)
    cols = rng.standard_normal((64 * 9, 64 * 64)).astype(np.float32)
    pred = rng.standard_normal((120, 64, 64)).astype(np.float32)
    obs = rng.standard_normal((120, 64, 64)).astype(np.float32)
    mask = rng.random((120, 64, 64)) < 0.7
    ens = rng.standard_normal((200, 30, 64, 64)).astype(np.float32)
    return {
        "im2col3x3 64x64x64": lambda k: k.im2col3x3(x),
        "col2im3x3 64x64x64": lambda k: k.col2im3x3(cols, 64, 64, 64),
        "masked_l1 120x64x64": lambda k: k.masked_l1(pred, obs, mask),
        "select_ranks 200x30x64x64": lambda k: k.select_ranks(ens, 4, 194),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<28}{t_py:>12.2f}{'-':>13}{'-':>9}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_py:>12.2f}{t_cy:>13.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
