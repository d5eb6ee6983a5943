"""Time the compiled and pure-Python kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N time for each backend and the
speedup. Outputs are checked for agreement before anything is timed.
"""
import argparse
import timeit

import numpy as np

from viewdvc.kernels import available_backends, load_backend


def workloads(rng):
    cost = rng.random((100, 12))                  # captioner matching: queries x events
    scores = rng.random((30, 30))                 # SODA matrix for a long video
    seg_a = np.sort(rng.random((200, 2)) * 100, axis=1)
    seg_b = np.sort(rng.random((50, 2)) * 100, axis=1)
    xy = rng.random((60, 2)) * 200
    box_a = np.hstack([xy, xy + rng.random((60, 2)) * 50 + 1])
    xy = rng.random((40, 2)) * 200
    box_b = np.hstack([xy, xy + rng.random((40, 2)) * 50 + 1])
    flags = rng.random(5000) < 0.5
    return {
        "linear_assignment 100x12": ("linear_assignment", (cost,)),
        "soda_dp 30x30": ("soda_dp", (scores,)),
        "pairwise_tiou 200x50": ("pairwise_tiou", (seg_a, seg_b)),
        "pairwise_box_iou 60x40": ("pairwise_box_iou", (box_a, box_b)),
        "majority_filter 5000/w9": ("majority_filter", (flags, 9)),
    }


def same(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=1e-12)
    if isinstance(a, float):
        return abs(a - b) <= 1e-12
    return a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    names = available_backends()
    backends = {n: load_backend(n) for n in names}
    if "cython" not in backends:
        print("compiled backend not built; timing the Python fallback only")
    jobs = workloads(np.random.default_rng(args.seed))

    print(f"{'kernel':<28}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for label, (fn, call_args) in jobs.items():
        outs = {n: getattr(b, fn)(*call_args) for n, b in backends.items()}
        ref = outs[names[-1]]
        if not all(same(o, ref) for o in outs.values()):
            raise SystemExit(f"{label}: backends disagree")
        times = {}
        for n, b in backends.items():
            f = getattr(b, fn)
            number = max(1, int(0.2 / max(timeit.timeit(lambda: f(*call_args), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: f(*call_args), number=number, repeat=args.repeat))
            times[n] = best / number * 1e3
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<28}" + "".join(f"{times[n]:>16.4f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
