#!/usr/bin/env python3
"""Throughput comparison of the two scoring kernels.

Scores a synthetic query set against a synthetic corpus with the compiled
extension and with the pure-Python fallback, checks the outputs are
bit-identical, and reports scores/second for each.

    python3 benchmarks/bench_scoring.py --docs 2000 --queries 200 --repeats 5
"""

from __future__ import annotations

import argparse
import random
import time

from pmfr._kernels import _scoring_py
from pmfr.scoring import load_stopwords

try:
    from pmfr._kernels import _scoring as _compiled
except ImportError:
    _compiled = None

WORDS = (
    "everest tungsten paris seine marathon trench coffee python latency "
    "snapshot synopsis provenance refinement adequacy transition commit "
    "kernel overlap token corpus evidence confidence version turn query "
    "the of and is what a an to in for 8848 3422 1991 42 10935"
).split()


def synth(rng: random.Random, n: int, lo: int, hi: int) -> list[str]:
    return [" ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))
            for _ in range(n)]


def run(impl, queries: list[str], docs: list[str], stopwords: frozenset[str],
        repeats: int) -> tuple[float, list[list[float]]]:
    best = float("inf")
    results: list[list[float]] = []
    for _ in range(repeats):
        started = time.perf_counter()
        results = [impl.score_batch(q, docs, stopwords) for q in queries]
        best = min(best, time.perf_counter() - started)
    return best, results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=2000)
    parser.add_argument("--queries", type=int, default=200)
    parser.add_argument("--doc-words", type=int, default=40)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    docs = synth(rng, args.docs, args.doc_words // 2, args.doc_words)
    queries = synth(rng, args.queries, 2, 8)
    stopwords = load_stopwords()
    n_scores = args.docs * args.queries

    py_secs, py_results = run(_scoring_py, queries, docs, stopwords, args.repeats)
    print(f"{'backend':<10} {'scores/s':>14} {'total':>10}")
    print(f"{'python':<10} {n_scores / py_secs:>14,.0f} {py_secs:>9.3f}s")

    if _compiled is None:
        print("compiled kernel not built; run pip install -e . to build it")
        return

    cy_secs, cy_results = run(_compiled, queries, docs, stopwords, args.repeats)
    if cy_results != py_results:
        raise SystemExit("backend outputs differ; kernels are out of sync")
    print(f"{'cython':<10} {n_scores / cy_secs:>14,.0f} {cy_secs:>9.3f}s")
    print(f"speedup: {py_secs / cy_secs:.2f}x (outputs bit-identical)")


if __name__ == "__main__":
    main()
