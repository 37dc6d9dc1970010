"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Inputs match the per-frame workload: a 13x13x5 grid with 5 classes, the NMS
candidates it yields, and one fuzzy centroid over the default universe.
"""

import argparse
import sys
import timeit

import numpy as np

from attireguard import kernels
from attireguard.fuzzy import FuzzyRuleBase, _compiled


def workload(seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(0, 1, (13, 13, 5, 10))
    data[..., 4] = rng.normal(-1, 2, (13, 13, 5))
    anchors = rng.uniform(0.5, 8, (5, 2))
    n = 200
    boxes = np.column_stack([rng.uniform(0, 416, (n, 2)), rng.uniform(10, 80, (n, 2))])
    class_ids = rng.integers(0, 5, n).astype(np.int64)
    universe, sets, _ = _compiled(FuzzyRuleBase())
    strengths = np.array([0.0, 0.7, 0.3])
    return {
        "decode_candidates": (data, anchors, 0.25),
        "greedy_nms": (boxes, class_ids, 0.45),
        "clipped_centroid": (universe, sets, strengths),
    }


def bench(impl, args, repeat):
    best = {}
    for name, a in args.items():
        fn = getattr(impl, name)
        t = timeit.Timer(lambda: fn(*a))
        number, _ = t.autorange()
        best[name] = min(t.repeat(repeat, number)) / number
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args(argv)
    args = workload()
    results = {"python": bench(kernels.pure, args, opts.repeat)}
    if kernels.compiled is not None:
        results["cython"] = bench(kernels.compiled, args, opts.repeat)
    else:
        print("compiled extension not available; timing the fallback only", file=sys.stderr)
    print(f"{'kernel':<20}" + "".join(f"{b + ' (us)':>15}" for b in results) + ("   speedup" if len(results) == 2 else ""))
    for name in args:
        row = f"{name:<20}" + "".join(f"{results[b][name] * 1e6:>15.2f}" for b in results)
        if len(results) == 2:
            row += f"   {results['python'][name] / results['cython'][name]:>6.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
