"""Timing comparison of the compiled and pure-numpy round kernels.

Runs the local-round kernel and the registry mean on a synthetic shard with
both implementations, checks they agree, and prints per-call timings. The
compiled path pays its compilation cost on the first call, so one warmup
call per implementation precedes timing.

Usage: python3 benchmarks/bench_backends.py [--rounds 200] [--d 160]
"""

import argparse
import time

import numpy as np

from fedspd import backends
from fedspd.datastore import generate_synthetic
from fedspd.sampling import rng_stream, sample_minibatch


def time_call(fn, args, rounds):
    fn(*args)  # warmup; triggers compilation on the numba path
    start = time.perf_counter()
    for _ in range(rounds):
        fn(*args)
    return (time.perf_counter() - start) / rounds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=200, help="timed calls per kernel")
    ap.add_argument("--d", type=int, default=160)
    ap.add_argument("--m", type=int, default=326, help="shard size")
    ap.add_argument("--Q", type=int, default=5)
    ap.add_argument("--b", type=int, default=10)
    args = ap.parse_args()

    rng = rng_stream(7, 0)
    shard = generate_synthetic(args.d, args.m, 0.0, 0.1, rng)
    batches = np.stack(
        [sample_minibatch(args.m, args.b, "WOR", rng) for _ in range(args.Q)]
    )
    x_start = rng.standard_normal(args.d) * 0.1
    x0 = rng.standard_normal(args.d) * 0.1
    lam = rng.standard_normal(args.d) * 0.1
    round_args = (shard.X, shard.y, batches, x_start, x0, lam, 50.0, 20.0, 0.01, 1.0)
    registry = rng.standard_normal((100, args.d))

    impls = backends.implementations()
    if "numba" not in impls:
        print("numba is not importable; only the numpy path is measured")

    reference = None
    print(f"local round: Q={args.Q} b={args.b} d={args.d}, {args.rounds} calls")
    for name, (local_round, ordered_mean) in sorted(impls.items()):
        x_avg, x_last = local_round(*round_args)
        if reference is None:
            reference = (np.asarray(x_avg), np.asarray(x_last))
        else:
            np.testing.assert_allclose(x_avg, reference[0], rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(x_last, reference[1], rtol=1e-12, atol=1e-12)
        t_round = time_call(local_round, round_args, args.rounds)
        t_mean = time_call(ordered_mean, (registry,), args.rounds)
        print(
            f"  {name:<6} local_round {t_round * 1e6:9.1f} us/call   "
            f"ordered_mean {t_mean * 1e6:7.1f} us/call"
        )
    if len(impls) == 2:
        print("implementations agree to 1e-12")


if __name__ == "__main__":
    main()
