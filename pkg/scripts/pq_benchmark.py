#!/usr/bin/env python3
"""Compression benchmark: recall, reconstruction error, and ADC latency.

Builds coarse+residual PQ indexes over seeded Gaussian corpora and reports
how the compressed search compares with exhaustive L2 ranking under three
query protocols: indexed vectors, perturbed indexed vectors, and fully
independent draws (the worst case for fixed-rate codes).

Usage:
    python scripts/pq_benchmark.py [--corpus 10000] [--dim 128] [--seed 4242]
"""

import argparse
import sys
import time
import warnings

import numpy as np

from compsearch.index import (
    IndexConfig,
    build_index,
    exact_search,
    recall_at_k,
    search,
)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def recall_report(index, ids, corpus, queries, tag, k=10):
    approx = [search(index, q, k=k, nprobe=index.nlist) for q in queries]
    exact = [exact_search((ids, corpus), q, k=k) for q in queries]
    r1 = recall_at_k(approx, exact, 1)
    r10 = recall_at_k(approx, exact, k)
    print(f"  {tag:<34} recall@1 {r1:6.3f}  recall@{k} {r10:.3f}")
    return r10


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", type=int, default=10_000)
    parser.add_argument("--queries", type=int, default=500)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--nlist", type=int, default=64)
    parser.add_argument("--seed", type=int, default=4242)
    parser.add_argument("--timing-corpus", type=int, default=100_000)
    args = parser.parse_args(argv)

    warnings.filterwarnings("ignore", category=RuntimeWarning)
    rng = np.random.default_rng(args.seed)
    corpus = rng.standard_normal((args.corpus, args.dim)).astype(np.float32)
    ids = [f"v-{i:06d}" for i in range(args.corpus)]
    pairs = list(zip(ids, corpus))

    print(f"corpus: {args.corpus} x {args.dim} seeded Gaussian vectors")
    print("\nreconstruction error vs code size (nlist=%d):" % args.nlist)
    index16 = None
    for m in (8, 16, 32):
        cfg = IndexConfig(dim_reduced=args.dim, nlist=args.nlist, m=m, seed=args.seed)
        index, seconds = timed(build_index, pairs, cfg)
        if m == 16:
            index16 = index
        z = index.projection.project(corpus)
        z_by_id = {i: z[k] for k, i in enumerate(ids)}
        rid, recon = index.reconstruct_all()
        err = float(
            np.mean([np.sqrt(((z_by_id[i] - r) ** 2).sum()) for i, r in zip(rid, recon)])
        )
        print(f"  m={m:<3} ({m:>2} bytes/code)  mean ||x - decode(encode(x))|| = {err:.4f}"
              f"   build {seconds:.1f}s")

    print("\nrecall vs exact search (m=16, nprobe=nlist):")
    sel = rng.choice(args.corpus, args.queries, replace=False)
    recall_report(index16, ids, corpus, corpus[sel], "self (indexed vectors)")
    perturbed = corpus[sel] + 0.25 * rng.standard_normal((args.queries, args.dim)).astype(np.float32)
    recall_report(index16, ids, corpus, perturbed, "perturbed corpus vectors (s=0.25)")
    independent = rng.standard_normal((args.queries, args.dim)).astype(np.float32)
    recall_report(index16, ids, corpus, independent, "independent draws (worst case)")

    print(f"\nADC latency over a {args.timing_corpus}-vector corpus (nprobe=32):")
    big = rng.standard_normal((args.timing_corpus, args.dim)).astype(np.float32)
    big_ids = [f"w-{i:06d}" for i in range(args.timing_corpus)]
    cfg = IndexConfig(
        dim_reduced=args.dim, nlist=args.nlist, m=16, seed=args.seed, train_size=20_000
    )
    big_index, seconds = timed(build_index, list(zip(big_ids, big)), cfg)
    print(f"  build: {seconds:.1f}s (quantizers trained on 20k vectors)")
    latencies = []
    search(big_index, big[0], k=10, nprobe=32)
    for q in rng.standard_normal((50, args.dim)).astype(np.float32):
        _, dt = timed(search, big_index, q, 10, 32)
        latencies.append(dt * 1000.0)
    latencies.sort()
    print(f"  per query: median {latencies[len(latencies) // 2]:.2f} ms, "
          f"p90 {latencies[int(len(latencies) * 0.9)]:.2f} ms  (10 ms soft target)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
