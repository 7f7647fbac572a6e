"""Compare the compiled evaluation kernels with their pure-Python counterparts.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 3] [--json out.json]

Both backends are loaded side by side, fed identical inputs and checked for
identical results before timing.
"""

import argparse
import json
import sys
import time

import numpy as np
from scipy import ndimage

from uaed.evaluation import _kernels_py as py
from uaed.evaluation.nms import edge_normal

try:
    from uaed.evaluation import _kernels as cy
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")


def make_inputs(size, seed):
    rng = np.random.default_rng(seed)
    prob = ndimage.gaussian_filter(rng.random((size, size)), 2.0)
    prob = (prob - prob.min()) / np.ptp(prob)
    gt = np.zeros((size, size), np.uint8)
    for _ in range(size // 8):
        r, c = rng.integers(0, size, 2)
        gt[r, max(c - 10, 0) : c + 10] = 1
    pred = ((prob > 0.55) & (rng.random((size, size)) < 0.3)).astype(np.uint8)
    theta = edge_normal(prob)
    return prob, np.cos(theta), np.sin(theta), pred, gt


def run_match(k, pred, gt, radius):
    pi, gi, d2 = k.candidate_pairs(pred, gt, radius)
    pi, gi, d2 = (np.asarray(a) for a in (pi, gi, d2))
    order = np.lexsort((gi, pi, d2))
    pi, gi = np.ascontiguousarray(pi[order]), np.ascontiguousarray(gi[order])
    mp, mg = k.greedy_assign(pi, gi, pred.size)
    mp, mg = np.asarray(mp), np.asarray(mg)
    order = np.lexsort((gi, d2[order], pi))
    indptr = np.zeros(pred.size + 1, np.int64)
    np.cumsum(np.bincount(pi, minlength=pred.size), out=indptr[1:])
    k.augment(indptr, np.ascontiguousarray(gi[order]), mp, mg)
    return mp, mg


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--radius", type=float, default=3.0)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    rows = []
    print(f"{'kernel':<10}{'size':>6}{'python s':>12}{'compiled s':>12}{'speedup':>9}")
    for size in args.size:
        prob, c, s, pred, gt = make_inputs(size, seed=size)
        cases = {
            "nms": lambda k: (np.asarray(k.nms_suppress(prob, c, s, 1)),),
            "match": lambda k: run_match(k, pred, gt, args.radius),
        }
        for name, fn in cases.items():
            t_py, out_py = timed(lambda: fn(py), args.repeat)
            t_cy, out_cy = timed(lambda: fn(cy), args.repeat)
            if not all(np.array_equal(a, b) for a, b in zip(out_py, out_cy)):
                sys.exit(f"{name} at {size}: backends disagree")
            rows.append({"kernel": name, "size": size, "python_s": t_py, "compiled_s": t_cy, "speedup": t_py / t_cy})
            print(f"{name:<10}{size:>6}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>8.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
