"""Benchmark the compiled beam-search kernel against the NumPy fallback.

The per-band candidate scorer is the hot loop of mask optimization; this
times full-band beam searches with each backend on identical inputs.

Usage: python benchmarks/bench_beam.py [--frames N] [--bands B] [--repeat R]
"""

import argparse
import time

import numpy as np

from binaural_masking._kernels import (
    BACKEND,
    score_candidates,
    score_candidates_pure,
)
from binaural_masking.hswobm import MaskObjectiveContext, optimize_band_beam


def run(scorer, ctx, beam_width):
    t0 = time.perf_counter()
    total = 0.0
    for j in range(ctx.n_bands):
        _, obj = optimize_band_beam(ctx, j, beam_width, scorer=scorer)
        total += obj
    return time.perf_counter() - t0, total


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=150)
    ap.add_argument("--bands", type=int, default=32)
    ap.add_argument("--mod-window", type=int, default=30)
    ap.add_argument("--beam-width", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    clean = rng.random((args.bands, args.frames)) + 0.05
    noisy = clean + 0.8 * rng.random((args.bands, args.frames))
    ctx = MaskObjectiveContext(
        clean, noisy, rng.random((args.bands, args.frames)), M=args.mod_window
    )

    print(f"active backend: {BACKEND}")
    print(
        f"workload: {args.bands} bands x {args.frames} frames, "
        f"M={args.mod_window}, W={args.beam_width}"
    )

    results = {}
    for name, scorer in (
        ("compiled" if BACKEND == "cython" else "default", score_candidates),
        ("numpy", score_candidates_pure),
    ):
        best = None
        obj = None
        for _ in range(args.repeat):
            dt, obj = run(scorer, ctx, args.beam_width)
            best = dt if best is None else min(best, dt)
        results[name] = (best, obj)
        print(f"  {name:>9}: {best:7.3f} s  (objective sum {obj:.6f})")

    names = list(results)
    if len(names) == 2:
        a, b = results[names[0]], results[names[1]]
        if abs(a[1] - b[1]) > 1e-9:
            print("WARNING: backends disagree on the objective")
        print(f"speedup {names[1]}/{names[0]}: {b[0] / a[0]:.2f}x")


if __name__ == "__main__":
    main()
