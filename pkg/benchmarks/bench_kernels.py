"""Benchmark the JIT and pure-numpy paths of the hot kernels.

The three kernels dominate preprocessing and the similarity analyzer:
batched style-code rendering, batched embedding, and pairwise residual
cosines. Run with defaults or scale the problem up:

    python benchmarks/bench_kernels.py --channels 512 --pairs 200

Setting STYLE_TOOLKIT_NUMBA=0 in the environment disables the JIT path
globally; this script instead selects each path explicitly per call.
"""

import argparse
import time

import numpy as np

from style_toolkit import kernels


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--channels", type=int, default=512)
    parser.add_argument("--pixels", type=int, default=3072)
    parser.add_argument("--embed-dim", type=int, default=512)
    parser.add_argument("--pairs", type=int, default=100)
    parser.add_argument("--residuals", type=int, default=50)
    parser.add_argument("--residual-dim", type=int, default=9216)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        parser.error("numba path disabled (STYLE_TOOLKIT_NUMBA=0); nothing to compare")

    rng = np.random.default_rng(args.seed)
    A = rng.normal(size=(args.pixels, args.channels)) * 0.01
    S = rng.normal(size=(args.pairs, args.channels))
    B = rng.normal(size=(args.embed_dim, args.pixels))
    X = rng.uniform(size=(args.pairs, args.pixels))
    R = rng.normal(size=(args.residuals, args.residual_dim))

    cases = [
        ("render_batch", lambda use: kernels.render_batch(A, S, 0.5, use_numba=use)),
        ("embed_batch", lambda use: kernels.embed_batch(B, X, use_numba=use)),
        ("pairwise_cosines", lambda use: kernels.pairwise_cosines(R, use_numba=use)),
    ]

    print("warming up JIT...")
    for _, fn in cases:
        fn(True)

    header = f"{'kernel':<18} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, fn in cases:
        ref = fn(False)
        jit = fn(True)
        ref_arr = ref[0] if isinstance(ref, tuple) else ref
        jit_arr = jit[0] if isinstance(jit, tuple) else jit
        if not np.allclose(ref_arr, jit_arr, atol=1e-10):
            raise SystemExit(f"{name}: paths disagree")
        t_np = time_call(lambda: fn(False), args.repeats)
        t_nb = time_call(lambda: fn(True), args.repeats)
        print(f"{name:<18} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
