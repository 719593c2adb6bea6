"""Sparse TF-IDF bi-encoder baseline with exact inner-product search.

Query contexts and corpus entries are embedded independently; retrieval is
an exhaustive top-k by inner product. Multi-step retrieval concatenates the
query with earlier evidence and stops dynamically on the DONE entry, sharing
:class:`~genret.multistep.MultiStepState` with the generative path.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .corpus_index import CorpusIndex
from .errors import ConfigError
from .multistep import MultiStepConfig, MultiStepState, RetrievedStep, finish_state, build_step_context
from .vocab import FRAMING_IDS, tokenize_query


@dataclass(frozen=True)
class SparseEmbedding:
    weights: dict[int, float]
    norm: float

    def dot(self, other: SparseEmbedding) -> float:
        a, b = (self, other) if len(self.weights) <= len(other.weights) else (other, self)
        total = 0.0
        for t in sorted(a.weights):
            w = b.weights.get(t)
            if w is not None:
                total += a.weights[t] * w
        return total


class EmbeddingIndex:
    """Per-entry TF-IDF embeddings plus an inverted index for exact scoring.

    ``idf(t) = ln((1 + N) / (1 + df(t))) + 1``, weights are ``tf * idf`` and,
    with ``normalize`` (default), every embedding is scaled to unit L2 norm.
    Framing tokens are ignored; DONE is embedded like any other token.
    """

    def __init__(self, index: CorpusIndex, normalize: bool = True):
        self.index = index
        self.normalize = normalize
        n = len(index.corpus)
        df: Counter = Counter()
        for e in index.corpus:
            df.update({t for t in e.tokens if t not in FRAMING_IDS})
        self._n = n
        self.idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        self.embeddings = [self.embed(e.tokens) for e in index.corpus]
        self._postings: dict[int, list[tuple[int, float]]] = {}
        for sid, emb in enumerate(self.embeddings):
            for t, w in emb.weights.items():
                self._postings.setdefault(t, []).append((sid, w))

    def idf_of(self, token: int) -> float:
        return self.idf.get(token, math.log(1 + self._n) + 1.0)

    def embed(self, tokens: Sequence[int] | str) -> SparseEmbedding:
        if isinstance(tokens, str):
            tokens = tokenize_query(self.index.vocab, tokens)
        tf = Counter(t for t in tokens if t not in FRAMING_IDS)
        weights = {t: c * self.idf_of(t) for t, c in sorted(tf.items())}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if self.normalize and norm > 0:
            weights = {t: w / norm for t, w in weights.items()}
            norm = 1.0
        return SparseEmbedding(weights, norm)

    def scores(self, query: SparseEmbedding) -> np.ndarray:
        """Inner product of ``query`` with every entry."""
        out = np.zeros(len(self.embeddings))
        for t in sorted(query.weights):
            qw = query.weights[t]
            for sid, w in self._postings.get(t, ()):
                out[sid] += qw * w
        return out

    def mips(self, query: SparseEmbedding, k: int, exclude: Collection[int] = ()) -> list[tuple[int, float]]:
        """Exact top-k by inner product; ties go to the smaller seq_id."""
        if k < 1:
            raise ConfigError("k must be >= 1")
        s = self.scores(query)
        # lexsort: last key is primary
        order = np.lexsort((np.arange(len(s)), -s))
        out = []
        for sid in order:
            sid = int(sid)
            if sid in exclude:
                continue
            out.append((sid, float(s[sid])))
            if len(out) == k:
                break
        return out


def run_multistep_be(cfg: MultiStepConfig, emb: EmbeddingIndex, query: str | Sequence[int]) -> MultiStepState:
    """Bi-encoder counterpart of :func:`genret.multistep.run_multistep`."""
    index = emb.index
    q = tokenize_query(index.vocab, query) if isinstance(query, str) else tuple(query)
    done_id = index.corpus.done_seq_id
    if cfg.mode == "dynamic" and done_id is None:
        raise ConfigError("dynamic mode needs the DONE entry in the corpus")
    state = MultiStepState(q)
    for t in range(1, cfg.step_budget + 1):
        ctx = build_step_context(q, [index.corpus[s].tokens for s in state.retrieved_ids])
        exclude = set(state.retrieved_ids) if cfg.dedup_retrieved else set()
        if cfg.mode != "dynamic" and done_id is not None:
            exclude.add(done_id)
        ranked = emb.mips(emb.embed(ctx), cfg.beam_width, exclude)
        if not ranked:
            raise ConfigError(f"step {t}: nothing left to retrieve")
        state.step_results.append(ranked)
        seq_id, score = ranked[0]
        if cfg.mode == "dynamic" and seq_id == done_id:
            state.done_step = RetrievedStep(t, seq_id, score)
            state.done = True
            break
        state.retrieved.append(RetrievedStep(t, seq_id, score))
    return finish_state(state, cfg)
