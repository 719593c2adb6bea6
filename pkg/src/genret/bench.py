"""Micro-benchmarks: constraint lookup by depth, early vs full decoding, index build cost.

All timings are machine-relative; only ratios and step counts are meant to be
compared. Each repetition times a batch of calls with ``perf_counter_ns``;
warm-up repetitions are discarded before taking medians.
"""
from __future__ import annotations

import platform
import statistics
import sys
import time
from typing import Callable, Sequence

from . import __version__
from .corpus_index import Corpus, CorpusIndex, build_trie, flatten, prefix_key
from .decoder import constrained_greedy
from .scorer import Scorer

BENCH_SCHEMA = "genret-bench"
BENCH_VERSION = 1
REFERENCE_LOOKUP_SPEEDUP = 0.56
REFERENCE_BUILD_OVERHEAD = 0.16


def machine_note() -> dict:
    return {"python": sys.version.split()[0], "platform": platform.platform(), "machine": platform.machine()}


def timeit_ns(fn: Callable[[], object], reps: int = 30, warmup: int = 5, inner: int = 200) -> dict:
    """Per-call latency stats over ``reps`` batches of ``inner`` calls."""
    samples = []
    for r in range(warmup + reps):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        dt = (time.perf_counter_ns() - t0) / inner
        if r >= warmup:
            samples.append(dt)
    q1, _, q3 = statistics.quantiles(samples, n=4)
    return {"median_ns": statistics.median(samples), "iqr_ns": q3 - q1, "min_ns": min(samples), "reps": reps}


def _report(scenario: str, params: dict, results: dict, reps: int, warmup: int) -> dict:
    return {
        "schema": BENCH_SCHEMA,
        "version": BENCH_VERSION,
        "tool_version": __version__,
        "scenario": scenario,
        "repetitions": reps,
        "warmup": warmup,
        "params": params,
        "results": results,
        "machine": machine_note(),
    }


def _slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    mx, my = statistics.fmean(xs), statistics.fmean(ys)
    den = sum((x - mx) ** 2 for x in xs)
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / den if den else 0.0


def bench_lookup(index: CorpusIndex, depths: Sequence[int] = (0, 4, 16, 64, 256), reps: int = 30,
                 warmup: int = 5, inner: int = 200, ratio_depths: tuple[int, int] = (4, 256)) -> dict:
    """Time "find the allowed next tokens" for the prefix of entry 0 at each depth.

    Trie: walk from the root, then read the children (cost grows with depth).
    Flat: one probe with the prefix key a decoder carries along.
    """
    trie, flat = index.trie, index.flat
    chain = index.corpus[0].tokens
    rows = {}
    for d in depths:
        if d > len(chain):
            raise ValueError(f"depth {d} exceeds entry length {len(chain)}")
        prefix = chain[:d]
        key = prefix_key(prefix, flat.base)
        assert set(trie.walk(prefix).children) == flat.lookup_key(key).next_tokens
        t = timeit_ns(lambda: trie.walk(prefix).children.keys(), reps, warmup, inner)
        f = timeit_ns(lambda: flat.lookup_key(key).next_tokens, reps, warmup, inner)
        rows[str(d)] = {"trie": t, "flat": f}
    ds = [float(d) for d in depths]
    flat_medians = [rows[str(d)]["flat"]["median_ns"] for d in depths]
    span = max(ds) - min(ds) if ds else 0.0
    summary = {
        "flat_trend": _slope(ds, flat_medians) * span / statistics.median(flat_medians),
        "reference_inference_reduction": REFERENCE_LOOKUP_SPEEDUP,
    }
    lo, hi = map(str, ratio_depths)
    if lo in rows and hi in rows:
        summary["trie_ratio"] = rows[hi]["trie"]["median_ns"] / rows[lo]["trie"]["median_ns"]
        summary["flat_ratio"] = rows[hi]["flat"]["median_ns"] / rows[lo]["flat"]["median_ns"]
        summary["ratio_depths"] = list(ratio_depths)
    params = {"num_sequences": len(index.corpus), "max_depth": index.max_depth, "depths": list(depths)}
    return _report("lookup_by_depth", params, {"by_depth": rows, "summary": summary}, reps, warmup)


def bench_decode(index: CorpusIndex, scorer: Scorer, queries: Sequence[Sequence[int]], reps: int = 30,
                 warmup: int = 5) -> dict:
    """Greedy decode with and without early stopping over the same queries."""
    out = {}
    seq_ids = {}
    for label, early in (("full", False), ("early", True)):
        results = [constrained_greedy(index, scorer, q, early_stop=early) for q in queries]
        seq_ids[label] = [r.top[0] for r in results]
        steps = [r.steps_scored for r in results]
        t = timeit_ns(lambda: [constrained_greedy(index, scorer, q, early_stop=early) for q in queries],
                      reps, warmup, inner=1)
        out[label] = {"steps_scored": steps, "mean_steps": statistics.fmean(steps), "batch_time": t}
    out["same_outputs"] = seq_ids["full"] == seq_ids["early"]
    out["time_ratio_early_over_full"] = out["early"]["batch_time"]["median_ns"] / out["full"]["batch_time"]["median_ns"]
    params = {"num_sequences": len(index.corpus), "num_queries": len(queries), "scorer": scorer.describe()}
    return _report("decode_early_vs_full", params, out, reps, warmup)


def bench_build(corpus: Corpus, reps: int = 5, warmup: int = 1) -> dict:
    """Trie build time vs trie build plus flattening, on the same corpus."""
    trie_ns, flat_ns = [], []
    for r in range(warmup + reps):
        t0 = time.perf_counter_ns()
        trie = build_trie(corpus)
        t1 = time.perf_counter_ns()
        flatten(trie)
        t2 = time.perf_counter_ns()
        if r >= warmup:
            trie_ns.append(t1 - t0)
            flat_ns.append(t2 - t0)
    ratios = [f / t for f, t in zip(flat_ns, trie_ns)]
    results = {
        "trie_build_ns": statistics.median(trie_ns),
        "flat_build_ns": statistics.median(flat_ns),
        "ratio_flat_over_trie": statistics.median(ratios),
        "ratios": ratios,
        "reference_build_overhead": REFERENCE_BUILD_OVERHEAD,
    }
    params = {"num_sequences": len(corpus), "max_length": corpus.max_length}
    return _report("build_trie_vs_flat", params, results, reps, warmup)
