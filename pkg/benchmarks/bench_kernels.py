"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from rt3 import kernels


def cases(rng):
    w = rng.normal(size=(256, 256))
    pats = rng.integers(0, 2, size=(8, 4, 4)).astype(np.uint8)
    return {
        "block_line_norms 256x256, 8x8 blocks": lambda k: k.block_line_norms(w, 32, 32, True),
        "assign_block_patterns 256x256, m=8": lambda k: k.assign_block_patterns(w, pats),
        "drain 200k runs": lambda k: k.drain(1.0, 5e-6, 1.0, 0.0, 2**62),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s}" + "".join(f"{b:>14s}" for b in backends) + ("      speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng).items():
        best = {}
        for b in backends:
            impl = kernels.get_backend(b)
            best[b] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        row = f"{name:40s}" + "".join(f"{best[b] * 1e3:12.3f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{best['python'] / best['cython']:12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
