"""Command-line entry point: ``genret <subcommand> ...``.

Subcommands: build-index, memorize, retrieve, eval, ensemble, similarity, bench.
Every output file carries a ``_meta`` header (tool version, subcommand,
configuration, seed). Errors exit non-zero with one line on stderr::

    genret: error: <ErrorClass>: <message>
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .bench import bench_build, bench_decode, bench_lookup
from .biencoder import EmbeddingIndex, run_multistep_be
from .corpus_index import Corpus, CorpusIndex, build_index, read_corpus_jsonl
from .ensemble import RankedList, interleave
from .errors import ConfigError, GenRetError, InputFormatError
from .jsonl import dumps, finite_or_none, qid_sort_key, read_jsonl, write_jsonl
from .metrics import evaluate, pairwise_similarity
from .multistep import DEFAULT_MAX_STEPS, MultiStepConfig, MultiStepState, run_multistep
from .scorer import DEFAULT_SPLIT_RATIO, NGramScorer, OracleScorer, UniformScorer, fit_memorization
from .synthetic import chain_corpus, random_corpus, shared_prefix_corpus
from .vocab import DONE_ID, build_vocabulary, tokenize_query

log = logging.getLogger("genret")

QUERY_KEYS = {"qid", "query", "gold", "mode", "T", "answers", "goal"}
# never embedded in output metadata: they do not influence results
_VOLATILE = {"out", "jobs", "config", "func", "stats_out", "verbose"}


def _seed(args) -> int:
    env = os.environ.get("GENRET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"GENRET_SEED must be an integer, got {env!r}") from None
    return args.seed


def _meta(args) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE and k != "seed"}
    return {"tool": "genret", "version": __version__, "subcommand": args.command, "config": config,
            "seed": args.seed}


def _write_json(path: str | None, doc: dict) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# build-index / memorize
# --------------------------------------------------------------------------


def cmd_build_index(args) -> int:
    texts, ids = read_corpus_jsonl(args.corpus)
    vocab = build_vocabulary(texts, args.vocab_mode)
    corpus = Corpus.from_texts(texts, vocab, add_done=args.add_done, source_ids=ids)
    index = build_index(corpus, args.depth_cutoff)
    index.save(args.out, _meta(args))
    stats = {"N": index.stats.num_sequences, **index.stats.to_dict(), "vocab_size": len(vocab)}
    print(dumps(stats))
    return 0


def _fit_ngram(index: CorpusIndex, args) -> tuple[NGramScorer, dict]:
    base = NGramScorer(index.vocab, args.ngram_order, args.ngram_k, args.ngram_lambda)
    fitted, report = fit_memorization(base, index.corpus, args.split_ratio)
    return fitted, report.to_dict()


def cmd_memorize(args) -> int:
    index = CorpusIndex.load(args.index)
    fitted, report = _fit_ngram(index, args)
    fitted.save(args.out, {**_meta(args), "memorization": report})
    print(dumps({"report": report, "meta": _meta(args)}))
    return 0


# --------------------------------------------------------------------------
# retrieve
# --------------------------------------------------------------------------


def _query_config(args, rec: dict) -> MultiStepConfig:
    mode = args.mode or rec.get("mode", "single")
    steps = args.steps if args.steps is not None else rec.get("T")
    if mode == "fixed" and steps is None:
        steps = len(rec.get("gold") or ()) or 1
    return MultiStepConfig(
        mode=mode,
        steps=steps or 1,
        max_steps=args.max_steps,
        beam_width=args.beam,
        dedup_retrieved=not args.no_dedup,
        early_stop=args.early_stop,
        max_length=args.max_length,
        decoder_side_context=args.decoder_context,
        lookup=args.lookup,
    )


def _oracle_for(index: CorpusIndex, rec: dict, cfg: MultiStepConfig) -> OracleScorer:
    gold = rec.get("gold")
    if gold is None or (not gold and cfg.mode != "dynamic"):
        raise ConfigError(f"oracle scorer needs gold texts (qid {rec['qid']!r})")
    targets = [index.vocab.tokenize(t) for t in gold]
    if cfg.mode == "dynamic":
        targets.append((DONE_ID,))
    return OracleScorer(index.vocab, {None: targets})


def _record(index: CorpusIndex, rec: dict, cfg: MultiStepConfig, state: MultiStepState) -> dict:
    def item(seq_id, score, **extra):
        return {"seq_id": seq_id, "text": index.text(seq_id), "logscore": finite_or_none(score), **extra}

    retrieved = [item(r.seq_id, r.logscore, step=r.step) for r in state.retrieved]
    if cfg.mode == "single":
        ranked = [item(s, sc) for s, sc in state.step_results[0]]
    else:
        ranked = [{k: v for k, v in r.items() if k != "step"} for r in retrieved]
    return {
        "qid": rec["qid"],
        "mode": cfg.mode,
        "ranked": ranked,
        "retrieved": retrieved,
        "steps": state.num_steps,
        "steps_scored": state.steps_scored,
        "early_stopped": state.early_stopped,
        "done": state.done,
        "missed_done": state.missed_done,
        "cumulative_logscore": finite_or_none(state.cumulative_logscore),
    }


def cmd_retrieve(args) -> int:
    index = CorpusIndex.load(args.index)
    queries = read_jsonl(args.queries, QUERY_KEYS, required=("qid", "query"))
    qids = [q["qid"] for q in queries]
    if len(set(map(str, qids))) != len(qids):
        raise InputFormatError("duplicate qids", args.queries)
    scorer = None
    extra_meta = {}
    if args.retriever == "be":
        emb = EmbeddingIndex(index)
    elif args.scorer == "uniform":
        scorer = UniformScorer(index.vocab)
    elif args.scorer == "ngram":
        if args.scorer_file:
            scorer = NGramScorer.load(args.scorer_file, index.vocab)
        elif args.memorize:
            scorer, extra_meta["memorization"] = _fit_ngram(index, args)
        else:
            scorer = NGramScorer(index.vocab, args.ngram_order, args.ngram_k, args.ngram_lambda)

    def run(rec: dict) -> dict:
        cfg = _query_config(args, rec)
        if args.retriever == "be":
            state = run_multistep_be(cfg, emb, rec["query"])
        else:
            s = _oracle_for(index, rec, cfg) if args.scorer == "oracle" else scorer
            state = run_multistep(cfg, index, s, tokenize_query(index.vocab, rec["query"]))
        return _record(index, rec, cfg, state)

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            records = list(pool.map(run, queries))
    else:
        records = [run(q) for q in queries]
    records.sort(key=lambda r: qid_sort_key(r["qid"]))
    meta = _meta(args)
    meta.update(extra_meta)
    dyn = [r for r in records if r["mode"] == "dynamic"]
    if dyn:
        meta["missing_done_rate"] = sum(r["missed_done"] for r in dyn) / len(dyn)
    write_jsonl(args.out, records, meta)
    return 0


# --------------------------------------------------------------------------
# eval / ensemble / similarity
# --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    preds = read_jsonl(args.preds, required=("qid",))
    gold = read_jsonl(args.gold, QUERY_KEYS, required=("qid",))
    report = evaluate(preds, gold, args.metrics, min_nodes=args.min_nodes).to_dict()
    report["meta"] = _meta(args)
    _write_json(args.out, report)
    return 0


def _ranked_texts(path: str) -> dict:
    out = {}
    for rec in read_jsonl(path, required=("qid", "ranked")):
        out[rec["qid"]] = [r["text"] for r in rec["ranked"]]
    return out


def cmd_ensemble(args) -> int:
    a, b = _ranked_texts(args.a), _ranked_texts(args.b)
    if set(a) != set(b):
        raise ConfigError("prediction files cover different qids")
    records = []
    for qid in sorted(a, key=qid_sort_key):
        merged = interleave(RankedList(qid, tuple(a[qid])), RankedList(qid, tuple(b[qid])), args.k,
                            start=args.start, names=("a", "b"))
        records.append({"qid": qid, "ranked": [{"text": t, "source": s} for t, s in zip(merged.items, merged.sources)]})
    write_jsonl(args.out, records, _meta(args))
    return 0


def cmd_similarity(args) -> int:
    sim = pairwise_similarity(_ranked_texts(args.a), _ranked_texts(args.b), args.k)
    _write_json(args.out, {"similarity": sim, "k": args.k, "meta": _meta(args)})
    return 0


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------


def cmd_bench(args) -> int:
    from .corpus_index import index_from_texts

    if args.scenario == "lookup":
        index = index_from_texts(chain_corpus(args.depth, seed=args.seed))
        depths = sorted({d for d in (0, 4, 16, 64, 256, args.depth) if d <= args.depth})
        report = bench_lookup(index, depths, reps=args.reps)
    elif args.scenario == "decode":
        index = index_from_texts(shared_prefix_corpus(args.n, args.shared))
        queries = [() for _ in range(8)]
        report = bench_decode(index, UniformScorer(index.vocab), queries, reps=args.reps)
    else:
        rng = random.Random(args.seed)
        texts = random_corpus(rng, args.n, 64, max_len=12)
        vocab = build_vocabulary(texts)
        report = bench_build(Corpus.from_texts(texts, vocab), reps=args.reps)
    report["meta"] = _meta(args)
    _write_json(args.out, report)
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--retriever", choices=("grls", "be"), default="grls")
    p.add_argument("--scorer", choices=("uniform", "oracle", "ngram"), default="uniform")
    p.add_argument("--scorer-file", help="fitted n-gram scorer JSON (from `memorize`)")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--mode", choices=("single", "fixed", "dynamic"), default=None,
                   help="override the per-query mode")
    p.add_argument("--steps", type=int, default=None, help="T for fixed mode (default: query's T)")
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--decoder-context", action="store_true",
                   help="feed earlier evidence to the decoder instead of the encoder")
    p.add_argument("--lookup", choices=("flat", "trie"), default="flat")
    p.add_argument("--jobs", type=int, default=1)


def _add_ngram_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ngram-order", type=int, default=2)
    p.add_argument("--ngram-k", type=float, default=0.1)
    p.add_argument("--ngram-lambda", type=float, default=0.5)
    p.add_argument("--memorize", action="store_true", help="fit the n-gram scorer on the corpus first")
    p.add_argument("--split-ratio", type=float, default=DEFAULT_SPLIT_RATIO)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genret", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"genret {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file of option defaults (unknown keys rejected)")
        return p

    p = add("build-index", cmd_build_index, "build the prefix index from a corpus JSONL")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-mode", choices=("word", "char"), default="word")
    p.add_argument("--add-done", action="store_true", help="add the DONE entry for dynamic retrieval")
    p.add_argument("--depth-cutoff", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("memorize", cmd_memorize, "fit the n-gram scorer on the corpus")
    p.add_argument("--index", required=True)
    _add_ngram_args(p)
    p.add_argument("--out", required=True)

    p = add("retrieve", cmd_retrieve, "run retrieval for a query JSONL")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    _add_decode_args(p)
    _add_ngram_args(p)

    p = add("eval", cmd_eval, "evaluate predictions against gold queries")
    p.add_argument("--preds", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metrics", default="recall@1,recall@5,f1,missing-done")
    p.add_argument("--min-nodes", type=int, default=2)
    p.add_argument("--out")

    p = add("ensemble", cmd_ensemble, "interleave two prediction files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--start", choices=("a", "b"), default="a")
    p.add_argument("--out", required=True)

    p = add("similarity", cmd_similarity, "pairwise prediction similarity of two files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out")

    p = add("bench", cmd_bench, "micro-benchmarks")
    p.add_argument("--scenario", choices=("lookup", "decode", "build"), required=True)
    p.add_argument("--depth", type=int, default=512)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--shared", type=int, default=8)
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--out")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        known = set(vars(args)) - {"func", "command", "config"}
        unknown = {k.replace("-", "_") for k in config} - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    args.seed = _seed(args)
    if getattr(args, "jobs", 1) < 1:
        raise ConfigError("--jobs must be >= 1")
    return args


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="genret: %(levelname)s: %(message)s")
    try:
        args = parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        print(f"genret {__version__} {args.command}: {dumps(_meta(args)['config'])} seed={args.seed}", file=sys.stderr)
        return args.func(args)
    except GenRetError as exc:
        print(f"genret: error: {exc.__class__.__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"genret: error: {exc.__class__.__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
