"""Shared test utilities: a seeded random scorer and an independent decoding oracle."""
from __future__ import annotations

import random
import zlib

import numpy as np

from genret.corpus_index import CorpusIndex, index_from_texts
from genret.scorer import Scorer, ScorerContext
from genret.synthetic import random_corpus
from genret.vocab import END_ID


class RandomScorer(Scorer):
    """Deterministic pseudo-random log-softmax rows keyed by the full context."""

    name = "random"

    def __init__(self, vocab, seed: int = 0, temperature: float = 1.0):
        super().__init__(vocab)
        self.seed = seed
        self.temperature = temperature

    def _logprobs(self, ctx: ScorerContext) -> np.ndarray:
        key = np.asarray(ctx.encoder_input + (-1,) + ctx.decoder_prefix, dtype=np.int64).tobytes()
        rng = np.random.default_rng([self.seed, zlib.crc32(key)])
        logits = rng.normal(size=self.vocab_size) / self.temperature
        top = logits.max()
        return logits - (top + np.log(np.exp(logits - top).sum()))


def random_index(seed: int, n: int | None = None, vocab_size: int | None = None, max_len: int = 6,
                 add_done: bool = False) -> CorpusIndex:
    rng = random.Random(seed)
    n = n or rng.randint(1, 50)
    vocab_size = vocab_size or rng.randint(2, 12)
    return index_from_texts(random_corpus(rng, n, vocab_size, max_len=max_len), add_done=add_done)


def consistent(entries, prefix):
    d = len(prefix)
    return [(sid, toks) for sid, toks in entries if toks[:d] == prefix]


def replay_greedy(index: CorpusIndex, scorer: Scorer, encoder_input=()):
    """Straight replay of constrained greedy decoding over the raw entry list.

    No trie, no flat table: the allowed set at each step is recomputed by
    scanning every entry. Ties go to the smallest seq_id that stays reachable.
    Returns (seq_id, logscore, steps).
    """
    entries = [(e.seq_id, e.tokens) for e in index.corpus]
    prefix: tuple[int, ...] = ()
    score = 0.0
    steps = 0
    while True:
        live = consistent(entries, prefix)
        options = {}
        for sid, toks in live:
            tok = toks[len(prefix)] if len(toks) > len(prefix) else END_ID
            options[tok] = min(options.get(tok, sid), sid)
        lp = scorer.next_token_logprobs(ScorerContext(tuple(encoder_input), prefix))
        steps += 1
        tok = min(options, key=lambda t: (-lp[t], options[t]))
        score += float(lp[tok])
        if tok == END_ID:
            return options[tok], score, steps
        prefix += (tok,)


def lcp(a, b) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


# --------------------------------------------------------------------------
# acceptance bookkeeping: one summary line per criterion
# --------------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def criterion(number: int, title: str):
    """Record PASS/FAIL (with the returned detail string) for an acceptance test."""
    import functools
    import time

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                ACCEPTANCE[number] = f"FAIL [{number:2d}] {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                raise
            ACCEPTANCE[number] = f"PASS [{number:2d}] {title}: {detail} ({time.perf_counter() - t0:.1f}s)"
        return inner
    return wrap
