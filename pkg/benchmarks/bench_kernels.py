"""Compare the compiled and pure-numpy kernels on the two hot loops.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Walk tallies are checked for exact equality between backends and potentials
for agreement to 1e-10 before timing is reported.
"""
import argparse
import time

import numpy as np

from prefwalk import _backend
from prefwalk.graph import connected_erdos_renyi
from prefwalk.potentials import potentials_batch, sample_fisher_walks


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--walks", type=int, default=100_000)
    ap.add_argument("--records", type=int, default=20_000)
    args = ap.parse_args()
    try:
        _backend.get_kernels("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return

    rng = np.random.default_rng(0)
    rows = []
    for n in (6, 12):
        g, _ = connected_erdos_renyi(n, 0.5, seed=n)
        theta = rng.uniform(-1, 1, n)
        theta -= theta.mean()
        res = {}
        for backend in ("compiled", "python"):
            res[backend] = best_of(
                lambda: sample_fisher_walks(g, theta, 0, n - 1, args.walks, seed=1, backend=backend),
                args.repeat)
        same = np.array_equal(res["compiled"][1].mean, res["python"][1].mean)
        rows.append((f"walks n={n} x{args.walks}", res["compiled"][0], res["python"][0], same))

    for n in (20, 50):
        g, _ = connected_erdos_renyi(n, 0.2 if n == 20 else 0.1, seed=n)
        theta = rng.uniform(-1, 1, (args.records, n))
        theta -= theta.mean(axis=1, keepdims=True)
        res = {}
        for backend in ("compiled", "python"):
            res[backend] = best_of(
                lambda: potentials_batch(g, theta, 0, 3, backend=backend, dedup=False), args.repeat)
        same = np.allclose(res["compiled"][1], res["python"][1], rtol=0, atol=1e-10)
        rows.append((f"potentials n={n} x{args.records}", res["compiled"][0], res["python"][0], same))

    print(f"{'kernel':<32}{'compiled s':>12}{'python s':>12}{'speedup':>10}  agree")
    for name, tc, tp, same in rows:
        print(f"{name:<32}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {same}")


if __name__ == "__main__":
    main()
