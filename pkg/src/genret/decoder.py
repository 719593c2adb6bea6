"""Constrained greedy and beam decoding over a corpus prefix index.

At every step the scorer's distribution is filtered to the tokens the index
allows after the current prefix; surviving log-probabilities are used as-is
(no renormalization unless asked for). Scores are sums of log-probabilities.

Ties are broken toward the smallest sequence id: a finished hypothesis is
keyed by its own id, a partial one by the smallest id in its subtree.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Sequence

import numpy as np

from .corpus_index import AllowedNext, CorpusIndex, FlatPrefixIndex, PrefixTrie
from .errors import ConfigError, DecodeError
from .scorer import Scorer, ScorerContext
from .vocab import END_ID, TokenSequence


class TrieConstraints:
    """Walks the trie from the root at every step (cost grows with prefix length)."""

    def __init__(self, trie: PrefixTrie):
        self.trie = trie

    def root(self) -> AllowedNext | None:
        return self.trie.lookup(())

    def advance(self, node: AllowedNext, prefix: TokenSequence) -> AllowedNext | None:
        return self.trie.lookup(prefix)


class FlatConstraints:
    """One hash probe per step, carrying the prefix key along."""

    def __init__(self, flat: FlatPrefixIndex, trie: PrefixTrie | None = None):
        self.flat = flat
        self.trie = trie
        if flat.depth_cutoff is not None and trie is None:
            raise ConfigError("a depth-limited flat index needs the trie for deeper prefixes")

    def root(self) -> AllowedNext | None:
        return self.flat.root

    def advance(self, node: AllowedNext, prefix: TokenSequence) -> AllowedNext | None:
        cutoff = self.flat.depth_cutoff
        if cutoff is not None and len(prefix) > cutoff:
            return self.trie.lookup(prefix)
        return self.flat.child(node, prefix[-1])


def make_constraints(index: CorpusIndex, lookup: str = "flat"):
    if lookup == "flat":
        return FlatConstraints(index.flat, index.trie if index.flat.depth_cutoff is not None else None)
    if lookup == "trie":
        return TrieConstraints(index.trie)
    raise ConfigError(f"lookup must be 'flat' or 'trie', got {lookup!r}")


@dataclass(frozen=True)
class Hypothesis:
    prefix: TokenSequence
    logscore: float
    finished: bool = False
    seq_id: int | None = None
    node: AllowedNext | None = field(default=None, compare=False, repr=False)

    @property
    def tie_id(self) -> int:
        return self.seq_id if self.finished else self.node.min_id

    def rank_key(self) -> tuple[float, int]:
        return (-self.logscore, self.tie_id)


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]]
    early_stopped: bool = False
    steps_scored: int = 0
    # tokens actually decoded per ranked entry (shorter than the entry after an early stop)
    generated: list[TokenSequence] = field(default_factory=list)

    @property
    def top(self) -> tuple[int, float]:
        return self.ranked[0]

    @property
    def seq_ids(self) -> list[int]:
        return [s for s, _ in self.ranked]


class _Exclusions:
    """Blocks already-retrieved sequences without leaving dead-end prefixes."""

    def __init__(self, index: CorpusIndex, exclude: Collection[int]):
        self.ids = frozenset(exclude)
        self.blocked: Counter = Counter()
        for sid in self.ids:
            tokens = index.corpus[sid].tokens
            for d in range(len(tokens) + 1):
                self.blocked[tokens[:d]] += 1

    def viable(self, node: AllowedNext, prefix: TokenSequence) -> bool:
        return not self.ids or node.count > self.blocked.get(prefix, 0)

    def untouched(self, prefix: TokenSequence) -> bool:
        return not self.ids or prefix not in self.blocked


def _step_logprobs(scorer: Scorer, encoder_input: TokenSequence, decoder_context: TokenSequence,
                   prefix: TokenSequence, allowed: Sequence[int], renormalize: bool) -> np.ndarray:
    lp = scorer.next_token_logprobs(ScorerContext(encoder_input, decoder_context + prefix))
    if renormalize and allowed:
        sub = lp[list(allowed)]
        top = sub.max()
        if np.isfinite(top):
            lp = lp - (top + np.log(np.exp(sub - top).sum()))
    return lp


def _prepare(index: CorpusIndex, scorer: Scorer, max_length: int | None):
    scorer.check_vocab(index.vocab)
    max_length = index.max_depth if max_length is None else max_length
    if max_length < 1:
        raise ConfigError("max_length must be >= 1")
    return max_length


def constrained_greedy(
    index: CorpusIndex,
    scorer: Scorer,
    encoder_input: Sequence[int],
    max_length: int | None = None,
    early_stop: bool = False,
    *,
    lookup: str = "flat",
    renormalize: bool = False,
    exclude: Collection[int] = (),
    decoder_context: Sequence[int] = (),
) -> RetrievalResult:
    """Argmax over the allowed next tokens until END (beam width 1).

    With ``early_stop`` the decode halts as soon as the prefix has a unique
    completion; the adopted remainder adds nothing to the score.
    """
    max_length = _prepare(index, scorer, max_length)
    cons = make_constraints(index, lookup)
    enc, ctx = tuple(encoder_input), tuple(decoder_context)
    excl = _Exclusions(index, exclude)
    prefix: TokenSequence = ()
    node = cons.root()
    score = 0.0
    steps = 0
    while True:
        if early_stop and node.unique_completion is not None and excl.untouched(prefix):
            return RetrievalResult([(node.unique_completion, score)], True, steps, [prefix])
        if len(prefix) >= max_length:
            raise DecodeError(f"unterminated decode: no END within max_length={max_length}")
        lp = _step_logprobs(scorer, enc, ctx, prefix, node.ordered, renormalize)
        steps += 1
        best = None
        for tok in node.ordered:
            if tok == END_ID:
                if node.terminal in excl.ids:
                    continue
                cand = (-float(lp[tok]), node.terminal, tok, None)
            else:
                child = cons.advance(node, prefix + (tok,))
                if child is None:
                    raise DecodeError("index corruption: allowed token has no child entry", steps)
                if not excl.viable(child, prefix + (tok,)):
                    continue
                cand = (-float(lp[tok]), child.min_id, tok, child)
            if best is None or cand[:2] < best[:2]:
                best = cand
        if best is None:
            raise DecodeError("empty allowed-set (corrupt index or everything excluded)", steps)
        neg, tie, tok, child = best
        score += -neg
        if tok == END_ID:
            return RetrievalResult([(tie, score)], False, steps, [prefix])
        prefix += (tok,)
        node = child


def constrained_beam(
    index: CorpusIndex,
    scorer: Scorer,
    encoder_input: Sequence[int],
    beam_width: int = 5,
    max_length: int | None = None,
    early_stop: bool = False,
    *,
    lookup: str = "flat",
    renormalize: bool = False,
    length_penalty: float | None = None,
    exclude: Collection[int] = (),
    decoder_context: Sequence[int] = (),
) -> RetrievalResult:
    """Constrained beam search returning up to ``beam_width`` distinct corpus entries.

    Finished hypotheses stay in the pool and compete with partial ones by
    score, so with ``beam_width >= len(corpus)`` nothing is ever pruned and
    every entry comes back with its full generation score.

    ``length_penalty`` (off by default) re-ranks the final list by
    ``logscore / (tokens + 1) ** length_penalty``; reported scores stay raw.
    """
    if beam_width < 1:
        raise ConfigError("beam width must be >= 1")
    max_length = _prepare(index, scorer, max_length)
    cons = make_constraints(index, lookup)
    enc, ctx = tuple(encoder_input), tuple(decoder_context)
    excl = _Exclusions(index, exclude)
    root = cons.root()
    live = [Hypothesis((), 0.0, node=root)]
    finished: list[Hypothesis] = []
    steps = 0
    early = False
    while live:
        if early_stop:
            still = []
            for h in live:
                if h.node.unique_completion is not None and excl.untouched(h.prefix):
                    finished.append(Hypothesis(h.prefix, h.logscore, True, h.node.unique_completion, h.node))
                    early = True
                else:
                    still.append(h)
            live = still
        live = [h for h in live if len(h.prefix) < max_length]
        if not live:
            break
        steps += 1
        pool = list(finished)
        for h in live:
            lp = _step_logprobs(scorer, enc, ctx, h.prefix, h.node.ordered, renormalize)
            for tok in h.node.ordered:
                s = h.logscore + float(lp[tok])
                if tok == END_ID:
                    if h.node.terminal not in excl.ids:
                        pool.append(Hypothesis(h.prefix, s, True, h.node.terminal, h.node))
                    continue
                prefix = h.prefix + (tok,)
                child = cons.advance(h.node, prefix)
                if child is None:
                    raise DecodeError("index corruption: allowed token has no child entry", steps)
                if excl.viable(child, prefix):
                    pool.append(Hypothesis(prefix, s, node=child))
        pool.sort(key=Hypothesis.rank_key)
        pool = pool[:beam_width]
        finished = [h for h in pool if h.finished]
        live = [h for h in pool if not h.finished]
    if not finished:
        raise DecodeError(f"unterminated decode: no END within max_length={max_length}")
    if length_penalty is None:
        finished.sort(key=Hypothesis.rank_key)
    else:
        finished.sort(key=lambda h: (-h.logscore / (len(h.prefix) + 1) ** length_penalty, h.seq_id))
    top = finished[:beam_width]
    return RetrievalResult([(h.seq_id, h.logscore) for h in top], early, steps, [h.prefix for h in top])


def score_sequence(
    scorer: Scorer,
    encoder_input: Sequence[int],
    target: Sequence[int],
    *,
    index: CorpusIndex | None = None,
    decoder_context: Sequence[int] = (),
) -> float:
    """Sum of per-position log-probabilities of ``target`` followed by END.

    This is the brute-force counterpart to decoding: no constraints, no search.
    """
    target = tuple(target)
    if index is not None and index.corpus.find(target) is None:
        raise DecodeError("target is not a corpus entry")
    enc, ctx = tuple(encoder_input), tuple(decoder_context)
    total = 0.0
    for i, tok in enumerate(target + (END_ID,)):
        total += float(scorer.next_token_logprobs(ScorerContext(enc, ctx + target[:i]))[tok])
    return total
