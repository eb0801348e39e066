"""Time the compiled and pure-Python sparse coding kernels on the same inputs.

    python benchmarks/bench_asc.py --n 200 --K 400 --N 70
"""
import argparse
import time

import numpy as np

from predvision import kernels
from predvision.sparse_coding import Dictionary, SimpleParams, encode_batch


def bench(backend, X, d, params, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = encode_batch(X, d, params, backend=backend)
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=200, help="inputs per batch")
    p.add_argument("--m", type=int, default=300, help="input dimension")
    p.add_argument("--K", type=int, default=400)
    p.add_argument("--N", type=int, default=70)
    p.add_argument("--T", type=int, default=25)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    d = Dictionary.random(args.m, args.K, rng)
    X = rng.uniform(-127.5, 127.5, (args.n, args.m))
    params = SimpleParams(args.K, args.N, args.T)

    results = {}
    for backend in kernels.available_backends():
        results[backend] = bench(backend, X, d, params, args.repeat)
        secs = results[backend][0]
        print(f"{backend:>7}: {secs:8.4f}s  {args.n / secs:10.1f} codes/s")
    if len(results) == 2:
        (tc, oc), (tp, op) = results["cython"], results["python"]
        same = all(np.array_equal(a, b) for a, b in zip(oc, op))
        print(f"speedup {tp / tc:.1f}x, identical outputs: {same}")
    else:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
