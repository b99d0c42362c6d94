"""Compiled kernels vs. the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times token edit distance (WER-sized and CER-sized inputs, plus the all-pairs
sweep over short strings) and the CTC forward-backward pass at a few shapes.
"""

import argparse
import itertools
import sys
import timeit

import numpy as np

from advtransfer import _fallback

try:
    from advtransfer import _kernels
except ImportError:
    _kernels = None


def _ext(labels, blank=0):
    out = [blank]
    for lab in labels:
        out += [lab, blank]
    return np.asarray(out, dtype=np.int64)


def cases(rng):
    words = [list(rng.integers(0, 500, size=n)) for n in (20, 20)]
    chars = [list(rng.integers(0, 28, size=n)) for n in (120, 110)]
    short = [list(p) for n in range(4) for p in itertools.product(range(3), repeat=n)]
    yield "edit distance, 20 words", lambda m: m.edit_distance(*words), 2000
    yield "edit distance, 120 chars", lambda m: m.edit_distance(*chars), 200
    yield (f"edit distance, all {len(short) ** 2} pairs len<=3",
           lambda m: [m.edit_distance(a, b) for a in short for b in short], 5)
    for T, V, L in ((50, 29, 10), (200, 29, 40), (600, 29, 120)):
        z = rng.normal(size=(T, V))
        lp = np.ascontiguousarray(z - np.log(np.exp(z).sum(1, keepdims=True)))
        ext = _ext(rng.integers(1, V, size=L))
        yield f"CTC fwd-bwd T={T} V={V} L={L}", (lambda m, lp=lp, ext=ext: m.ctc_forward_backward(lp, ext)), 20


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'case':44s} {'cython':>12s} {'python':>12s} {'speedup':>8s}")
    for name, fn, number in cases(rng):
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=max(1, number // 10), repeat=args.repeat))
        t_py /= max(1, number // 10)
        if _kernels is not None:
            t_cy = min(timeit.repeat(lambda: fn(_kernels), number=number, repeat=args.repeat)) / number
            print(f"{name:44s} {t_cy * 1e6:10.1f}us {t_py * 1e6:10.1f}us {t_py / t_cy:7.1f}x")
        else:
            print(f"{name:44s} {'-':>12s} {t_py * 1e6:10.1f}us {'-':>8s}")


if __name__ == "__main__":
    main()
