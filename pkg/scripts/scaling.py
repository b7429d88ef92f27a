"""Per-batch wall time against rank and batch size.

Every timed call runs a fixed number of sweeps (tolerance 0) so the
measurement isolates the per-sweep cost. Prints one row per (R, S) with the
best of ``--reps`` timings.

    python scripts/scaling.py --ranks 2 3 4 --sizes 4096 8192 16384 32768
"""
import argparse
import time

from streamtt.engine import EngineConfig, fit_batch
from streamtt.posterior import PriorConfig, init_state, tt_ranks
from streamtt.synthetic import corrupt_and_observe, sample_ground_truth


def batch_seconds(shape, R, S, reps, sweeps):
    D = len(shape)
    gt = sample_ground_truth(shape, tt_ranks(D, 3), seed=0)
    total = 1
    for n in shape:
        total *= n
    obs = corrupt_and_observe(gt, 20.0, min(1.0, S / total), seed=1)
    state = init_state(shape, tt_ranks(D, R), PriorConfig(init_seed=2))
    cfg = EngineConfig(max_inner_iters=sweeps, inner_tolerance=0.0)
    fit_batch(state, obs.batch, cfg)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fit_batch(state, obs.batch, cfg)
        best = min(best, time.perf_counter() - t0)
    return best, len(obs.batch)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dims", type=int, nargs="+", default=[20, 20, 20, 20])
    p.add_argument("--ranks", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--sizes", type=int, nargs="+", default=[4096, 8192, 16384, 32768])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--sweeps", type=int, default=3)
    args = p.parse_args()

    print("rank batch_size seconds seconds_per_obs_sweep")
    for R in args.ranks:
        for S in args.sizes:
            sec, n = batch_seconds(tuple(args.dims), R, S, args.reps, args.sweeps)
            print(R, n, f"{sec:.4f}", f"{sec / (n * args.sweeps):.3e}")


if __name__ == "__main__":
    main()
