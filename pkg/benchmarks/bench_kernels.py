"""Compiled vs pure-Python kernels on the paper-default instance.

    python benchmarks/bench_kernels.py [--subgames 200] [--outer-iters 2000]

Times subgame solves on random start profiles and the start-time iteration on a
payoff tensor, for each backend that is importable.  The tensor is built on
the fly for a reduced instance unless --cache points at a complete paper-default
cache (``evgame tensor`` output).
"""

import argparse
import time

import numpy as np

from evgame import _pykernels, outer_game
from evgame.inner_game import SolveOptions, initial_profile
from evgame.payoff_tensor import cache_load
from evgame.scenario import paper_default

try:
    from evgame import _ckernels
except ImportError:
    _ckernels = None


def bench_subgames(kernels, arrays, profiles):
    budget = arrays.demand / arrays.efficiency
    opts = SolveOptions()
    damping = opts.damping_for(len(budget))
    t0 = time.perf_counter()
    sweeps = 0
    for s0 in profiles:
        x0 = initial_profile(arrays, s0, opts)
        x, k, _, _ = kernels.solve_subgame(arrays.base_load, arrays.phi, arrays.delta, budget,
                                           arrays.upper, arrays.weights, s0, x0, opts.eps_alg,
                                           opts.max_sweeps, damping)
        kernels.certify(arrays.base_load, arrays.phi, arrays.delta, budget, arrays.upper,
                        arrays.weights, s0, x)
        sweeps += k
    return time.perf_counter() - t0, sweeps


def bench_outer(kernels, tensor, iters):
    rows = tensor.player_rows()
    shape = np.asarray(tensor.shape)
    A = np.zeros((len(shape), shape.max()))
    for i, n in enumerate(shape):
        A[i, :n] = 1.0 / n
    out = {}
    for name, alphas in (("eut", None), ("pt(0.5)", np.full(len(shape), 0.5))):
        t0 = time.perf_counter()
        kernels.outer_iterate(rows, shape, A, alphas, 0.7, iters, 0.0, outer_game.TIE_RTOL)
        out[name] = time.perf_counter() - t0
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subgames", type=int, default=200)
    ap.add_argument("--outer-iters", type=int, default=2000)
    ap.add_argument("--cache", help="complete paper-default tensor cache for the outer benchmark")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sc = paper_default()
    arrays = sc.arrays()
    rng = np.random.default_rng(args.seed)
    profiles = [np.array([rng.integers(0, n) for n in arrays.start_sets]) for _ in range(args.subgames)]
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])

    print(f"subgame solves ({args.subgames} random start profiles, N={len(arrays.demand)}, "
          f"T={len(arrays.base_load)})")
    base = None
    for name, k in backends:
        secs, sweeps = bench_subgames(k, arrays, profiles)
        base = base or secs
        print(f"  {name:7s} {secs:8.3f} s  {secs / args.subgames * 1e3:8.3f} ms/solve  "
              f"{sweeps / args.subgames:5.1f} sweeps/solve  x{base / secs:6.1f}")

    if args.cache:
        tensor = cache_load(args.cache, sc)
    else:
        # synthetic tensor of the paper-default shape; timing only depends on the shape
        from evgame.payoff_tensor import PayoffTensor
        tensor = PayoffTensor.empty(sc.digest(), arrays.start_sets, len(arrays.base_load))
        tensor.payoffs[...] = -rng.uniform(500, 2000, tensor.payoffs.shape)
    print(f"start-time iteration ({args.outer_iters} iterations, K={tensor.size})")
    ref = None
    for name, k in backends:
        res = bench_outer(k, tensor, args.outer_iters)
        ref = ref or res
        for model, secs in res.items():
            print(f"  {name:7s} {model:8s} {secs:8.3f} s  {secs / args.outer_iters * 1e6:8.1f} us/iter  "
                  f"x{ref[model] / secs:6.1f}")
    if _ckernels is None:
        print("compiled kernels not built; only the pure-Python backend was timed")


if __name__ == "__main__":
    main()
