"""Time the numba and numpy kernel implementations against each other.

Runs both code paths directly (ignoring SCIRFORGE_KERNELS) so the two
columns are always comparable, and checks they agree on every workload.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --lcs-sizes 128,512 --repeats 5
"""
import argparse
import time

import numpy as np

from scirforge import kernels


def best_of(fn, repeats):
    """Best wall time over `repeats` calls, in milliseconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench_lcs(sizes, repeats, rng):
    print("lcs_length (token id sequences, vocab 50)")
    for n in sizes:
        a = rng.integers(0, 50, size=n).astype(np.int64)
        b = rng.integers(0, 50, size=n).astype(np.int64)
        t_np = best_of(lambda: kernels._lcs_length_np(a, b), repeats)
        if kernels.HAS_NUMBA:
            kernels._lcs_length_nb(a[:4], b[:4])  # trigger the jit compile
            t_nb = best_of(lambda: kernels._lcs_length_nb(a, b), repeats)
            assert kernels._lcs_length_nb(a, b) == kernels._lcs_length_np(a, b)
            print(f"  n={n:<6d} numba {t_nb:8.3f} ms   numpy {t_np:8.3f} ms   "
                  f"numba is {t_np / t_nb:5.1f}x")
        else:
            print(f"  n={n:<6d} numpy {t_np:8.3f} ms   (numba not installed)")


def bench_bm25(n_units, n_postings, n_terms, repeats, rng):
    print(f"bm25_accumulate ({n_units} units, {n_postings} postings/term, "
          f"{n_terms} terms/query)")
    unit_ids = np.sort(rng.choice(n_units, size=n_postings, replace=False)).astype(np.int64)
    tfs = rng.integers(1, 6, size=n_postings).astype(np.float64)
    norm = (1.2 * (0.25 + 0.75 * rng.uniform(0.3, 3.0, size=n_units))).astype(np.float64)

    def run(impl):
        scores = np.zeros(n_units, dtype=np.float64)
        for _ in range(n_terms):
            impl(scores, unit_ids, tfs, 1.37, 1.2, norm)
        return scores

    t_np = best_of(lambda: run(kernels._bm25_accumulate_np), repeats)
    if kernels.HAS_NUMBA:
        run(kernels._bm25_accumulate_nb)  # trigger the jit compile
        t_nb = best_of(lambda: run(kernels._bm25_accumulate_nb), repeats)
        assert np.array_equal(run(kernels._bm25_accumulate_nb), run(kernels._bm25_accumulate_np))
        print(f"  numba {t_nb:8.3f} ms   numpy {t_np:8.3f} ms   "
              f"numba is {t_np / t_nb:5.1f}x")
    else:
        print(f"  numpy {t_np:8.3f} ms   (numba not installed)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lcs-sizes", default="64,128,256,512",
                    help="comma-separated sequence lengths")
    ap.add_argument("--units", type=int, default=50000, help="bm25 corpus units")
    ap.add_argument("--postings", type=int, default=10000, help="posting list length")
    ap.add_argument("--terms", type=int, default=64, help="query terms per run")
    ap.add_argument("--repeats", type=int, default=7, help="best-of repeats")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"selected backend at import: {kernels.backend_name()}")
    print()
    bench_lcs([int(s) for s in args.lcs_sizes.split(",")], args.repeats, rng)
    print()
    bench_bm25(args.units, args.postings, args.terms, args.repeats, rng)


if __name__ == "__main__":
    main()
