"""Compare the compiled and pure-Python skip-gram kernels on one synthetic corpus.

Usage: python3 benchmarks/bench_sgns.py [--clients 2000] [--epochs 1] [--repeat 3]

Both kernels run the same pairs with the same initial vectors; the script
checks that they return bit-identical vectors and reports wall times.
"""
import argparse
import time

import numpy as np

from txembed.skipgram import KERNELS, W2vConfig, train_skipgram
from txembed.synthgen import GenConfig, generate
from txembed.tokens import fit_bins, tokenize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clients", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    table, _, _ = generate(GenConfig(args.clients, 70, 5, seed=0))
    corpus = tokenize(table, fit_bins(table, 10))
    cfg = W2vConfig(embed_dim=32, window=5, negatives=5, epochs=args.epochs, seed=0)
    print(f"corpus: {len(corpus)} clients, {corpus.n_tokens} tokens, vocabulary {len(corpus.vocabulary)}")

    results, times = {}, {}
    for backend in sorted(KERNELS):
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            results[backend] = train_skipgram(corpus, cfg, backend=backend)
            best = min(best, time.perf_counter() - t0)
        times[backend] = best
        print(f"{backend:>7}: {best:8.3f} s (best of {args.repeat})")
    if "cython" in times:
        print(f"speedup: {times['python'] / times['cython']:.1f}x")
        print("identical vectors:", bool(np.array_equal(results["python"], results["cython"])))
    else:
        print("compiled kernel not built; only the pure-Python kernel was timed")


if __name__ == "__main__":
    main()
