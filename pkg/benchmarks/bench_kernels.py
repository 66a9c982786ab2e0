"""Time the compiled kernels against the pure-Python/numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--large]

``--large`` adds the 1e7-sample tail count used by the Monte Carlo oracle.
Both backends are also checked for bit-identical output on every workload.
"""

import argparse
import math
import sys
import timeit

import numpy as np

from iltber import _pykernels

try:
    from iltber import _kernels
except ImportError:
    _kernels = None


def workloads(large: bool):
    tail = (11, 12, 0.0, 1.0, -2.3, 0.0, 1.0, 2.3)
    jobs = [
        ("mix64_block 1e6", lambda k: k.mix64_block(1, 0, 1_000_000)),
        ("normals 1e6", lambda k: k.normals(1, 0, 1_000_000)),
        ("tail_counts 1e6", lambda k: k.tail_counts(tail[0], tail[1], 1_000_000, *tail[2:])),
        ("ln_erfc x1e4", lambda k: [k.ln_erfc(x) for x in np.linspace(-5, 40, 10_000).tolist()]),
        ("normal_tail_quad x100", lambda k: [k.normal_tail_quad(z) for z in np.linspace(0, 7, 100).tolist()]),
    ]
    if large:
        jobs.append(("tail_counts 1e7", lambda k: k.tail_counts(tail[0], tail[1], 10_000_000, *tail[2:])))
    return jobs


def same(a, b) -> bool:
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--large", action="store_true")
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    print(f"{'workload':<24}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, fn in workloads(args.large):
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        ok = same(fn(_pykernels), fn(_kernels))
        speed = t_py / t_cy if t_cy > 0 else math.inf
        print(f"{name:<24}{t_py:>12.4f}{t_cy:>12.4f}{speed:>9.1f}x  {ok}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
