"""Compare the compiled and numpy backends of the sparse contraction kernel.

    python benchmarks/bench_kernels.py [--users 6040 --items 3706 --nnz 1000000]

Defaults mimic an ML-1M sized rating tensor. For every mode the script times
``contract_others`` on both backends (best of ``--repeat`` runs), checks that
they agree, then times one full HOOI fit per backend.
"""
import argparse
import time

import numpy as np

from latte_rec import kernels
from latte_rec.linalg import SparseTensor3, contract_others, hooi


def random_tensor(users, items, ratings, nnz, seed):
    rng = np.random.default_rng(seed)
    # popularity skew so that rows have uneven lengths, as in real data
    item_p = rng.pareto(1.2, items) + 1.0
    pairs = np.unique(
        np.column_stack([rng.integers(0, users, nnz), rng.choice(items, nnz, p=item_p / item_p.sum())]), axis=0
    )
    coords = np.column_stack([pairs, rng.integers(0, ratings, len(pairs))])
    return SparseTensor3((users, items, ratings), coords)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=6040)
    ap.add_argument("--items", type=int, default=3706)
    ap.add_argument("--ratings", type=int, default=5)
    ap.add_argument("--nnz", type=int, default=1_000_000)
    ap.add_argument("--rank", type=int, default=64)
    ap.add_argument("--rating-rank", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    t = random_tensor(args.users, args.items, args.ratings, args.nnz, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    ranks = (args.rank, args.rank, args.rating_rank)
    factors = [np.linalg.qr(rng.standard_normal((d, r)))[0] for d, r in zip(t.dims, ranks)]
    print(f"tensor {t.dims}, nnz {t.nnz}, ranks {ranks}, threads {kernels.thread_count()}, "
          f"default backend {kernels.BACKEND}")
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the numpy backend is timed")

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"{'mode':>6} " + " ".join(f"{b:>10}" for b in backends) + "   speedup  max|diff|")
    for mode in range(3):
        timings, outs = [], []
        for b in backends:
            secs, out = best_of(lambda: contract_others(t, factors, mode, backend=b), args.repeat)
            timings.append(secs)
            outs.append(out)
        speedup = timings[0] / timings[-1]
        diff = float(np.abs(outs[0] - outs[-1]).max())
        print(f"{mode + 1:>6} " + " ".join(f"{s:>9.3f}s" for s in timings) + f"   {speedup:6.2f}x  {diff:.1e}")

    for b in backends:
        t0 = time.perf_counter()
        res = hooi(t, ranks, backend=b)
        print(f"hooi[{b}]: {time.perf_counter() - t0:.2f}s, {res.iterations} sweeps, fit {res.fit:.6f}")


if __name__ == "__main__":
    main()
