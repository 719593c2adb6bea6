"""Next-token scorers: the stand-in for a trained encoder-decoder model.

A scorer maps (encoder input, decoder prefix) to a dense vector of
log-probabilities over the vocabulary. Three implementations:

* :class:`UniformScorer` - every token equally likely.
* :class:`OracleScorer` - scripted targets, for tests and upper bounds.
* :class:`NGramScorer` - add-k smoothed n-gram LM over the decoder prefix,
  blended with a bias toward tokens that occur in the encoder input.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus_index import Corpus
from .errors import ConfigError, VocabularyMismatchError
from .vocab import (
    DONE_ID,
    END_ID,
    EV_CLOSE_ID,
    EV_OPEN_ID,
    FRAMING_IDS,
    Q_CLOSE_ID,
    Q_OPEN_ID,
    TokenSequence,
    Vocabulary,
)

SCORER_FORMAT_VERSION = 1
DEFAULT_SPLIT_RATIO = 0.7


@dataclass(frozen=True)
class ScorerContext:
    encoder_input: TokenSequence
    decoder_prefix: TokenSequence = ()


class Scorer(ABC):
    """Base class. Scorers are immutable once constructed (or fitted)."""

    name = "scorer"

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.vocab_size = len(vocab)

    @abstractmethod
    def _logprobs(self, ctx: ScorerContext) -> np.ndarray: ...

    def next_token_logprobs(self, ctx: ScorerContext) -> np.ndarray:
        """Log-probabilities for the next decoder token (length ``len(vocab)``)."""
        for tokens in (ctx.encoder_input, ctx.decoder_prefix):
            if tokens and (max(tokens) >= self.vocab_size or min(tokens) < 0):
                raise VocabularyMismatchError(
                    f"context token id out of range for a {self.vocab_size}-token vocabulary")
        return self._logprobs(ctx)

    def check_vocab(self, vocab: Vocabulary) -> None:
        if vocab.fingerprint != self.vocab.fingerprint:
            raise VocabularyMismatchError(f"{self.name} scorer was built for a different vocabulary")

    def describe(self) -> dict:
        return {"scorer": self.name}


class UniformScorer(Scorer):
    name = "uniform"

    def __init__(self, vocab: Vocabulary):
        super().__init__(vocab)
        self._row = np.full(self.vocab_size, -math.log(self.vocab_size))
        self._row.flags.writeable = False

    def _logprobs(self, ctx: ScorerContext) -> np.ndarray:
        return self._row


def query_tokens(encoder_input: Sequence[int]) -> TokenSequence:
    """Tokens between the leading Q_OPEN and the first Q_CLOSE (the whole input if unframed)."""
    enc = tuple(encoder_input)
    if enc and enc[0] == Q_OPEN_ID and Q_CLOSE_ID in enc:
        return enc[1 : enc.index(Q_CLOSE_ID)]
    return enc


class OracleScorer(Scorer):
    """Scripted scorer that spells a fixed target per query and retrieval step.

    ``script`` maps a query's tokens (as found between Q_OPEN/Q_CLOSE) to the
    list of target sequences for steps 1, 2, ...; the key ``None`` is a
    fallback for any query. The step is the number of evidence blocks already
    present in the encoder input plus the decoder prefix. When the prefix
    leaves the script (or the script is exhausted) the scorer is uniform.

    With ``confidence=1`` the scored token gets log-probability 0 and every
    other token ``-inf``; lower confidence spreads the rest uniformly.
    """

    name = "oracle"

    def __init__(self, vocab: Vocabulary, script: Mapping[TokenSequence | None, Sequence[Sequence[int]]],
                 confidence: float = 1.0):
        super().__init__(vocab)
        if not 0.0 < confidence <= 1.0:
            raise ConfigError("oracle confidence must lie in (0, 1]")
        self.script = {(None if k is None else tuple(k)): [tuple(t) for t in v] for k, v in script.items()}
        self.confidence = confidence
        v = self.vocab_size
        self._uniform = np.full(v, -math.log(v))
        self._off = -math.inf if confidence == 1.0 else math.log((1.0 - confidence) / (v - 1))
        self._on = math.log(confidence)

    @classmethod
    def for_target(cls, vocab: Vocabulary, target: Sequence[int] | str, confidence: float = 1.0) -> OracleScorer:
        if isinstance(target, str):
            target = vocab.tokenize(target)
        return cls(vocab, {None: [tuple(target)]}, confidence)

    @classmethod
    def from_texts(cls, vocab: Vocabulary, script: Mapping[str | None, Sequence[str]],
                   confidence: float = 1.0) -> OracleScorer:
        return cls(
            vocab,
            {(None if q is None else vocab.tokenize(q)): [vocab.tokenize(t) for t in targets]
             for q, targets in script.items()},
            confidence,
        )

    def _logprobs(self, ctx: ScorerContext) -> np.ndarray:
        targets = self.script.get(query_tokens(ctx.encoder_input), self.script.get(None))
        dec = ctx.decoder_prefix
        step = ctx.encoder_input.count(EV_OPEN_ID) + dec.count(EV_OPEN_ID)
        if EV_CLOSE_ID in dec:
            dec = dec[len(dec) - dec[::-1].index(EV_CLOSE_ID):]
        if targets is None or step >= len(targets):
            return self._uniform
        target = targets[step]
        i = len(dec)
        if i > len(target) or target[:i] != dec:
            return self._uniform
        nxt = target[i] if i < len(target) else END_ID
        row = np.full(self.vocab_size, self._off)
        row[nxt] = self._on
        return row

    def describe(self) -> dict:
        return {"scorer": self.name, "confidence": self.confidence}


class NGramScorer(Scorer):
    """Add-k smoothed n-gram model over the decoder prefix with encoder-overlap bias.

    ``p(t) = (1 - lam) * p_ngram(t | last order-1 tokens) + lam * p_overlap(t)``
    where ``p_overlap`` is uniform over the distinct content tokens of the
    encoder input (uniform over the vocabulary if there are none). Sequences
    are padded on the left with END, which doubles as the boundary marker.
    With ``k == 0`` an unseen context falls back to uniform.
    """

    name = "ngram"

    def __init__(self, vocab: Vocabulary, order: int = 2, k: float = 0.1, lam: float = 0.5,
                 counts: Mapping[TokenSequence, Mapping[int, int]] | None = None):
        super().__init__(vocab)
        if order < 1:
            raise ConfigError("n-gram order must be >= 1")
        if k < 0 or not 0.0 <= lam <= 1.0:
            raise ConfigError("need k >= 0 and 0 <= lambda <= 1")
        self.order = order
        self.k = float(k)
        self.lam = float(lam)
        self.counts: dict[TokenSequence, Counter] = {tuple(c): Counter(d) for c, d in (counts or {}).items()}
        self._uniform = np.full(self.vocab_size, 1.0 / self.vocab_size)
        self._ngram_cache: dict[TokenSequence, np.ndarray] = {}
        self._overlap_cache: dict[TokenSequence, np.ndarray] = {}

    def fit(self, sequences: Iterable[Sequence[int]]) -> NGramScorer:
        """Return a new scorer with counts from ``sequences`` added (each ends with END)."""
        counts = {c: Counter(d) for c, d in self.counts.items()}
        pad = (END_ID,) * (self.order - 1)
        for seq in sequences:
            padded = pad + tuple(seq) + (END_ID,)
            for i in range(len(padded) - self.order + 1):
                ctx = padded[i : i + self.order - 1]
                counts.setdefault(ctx, Counter())[padded[i + self.order - 1]] += 1
        return NGramScorer(self.vocab, self.order, self.k, self.lam, counts)

    def _context(self, prefix: TokenSequence) -> TokenSequence:
        n = self.order - 1
        if n == 0:
            return ()
        tail = prefix[-n:]
        return (END_ID,) * (n - len(tail)) + tail

    def ngram_probs(self, prefix: TokenSequence) -> np.ndarray:
        ctx = self._context(prefix)
        row = self._ngram_cache.get(ctx)
        if row is None:
            row = np.full(self.vocab_size, self.k)
            seen = self.counts.get(ctx)
            if seen:
                for tok, c in seen.items():
                    row[tok] += c
            total = row.sum()
            row = row / total if total > 0 else self._uniform
            self._ngram_cache[ctx] = row
        return row

    def _overlap(self, encoder_input: TokenSequence) -> np.ndarray:
        row = self._overlap_cache.get(encoder_input)
        if row is None:
            content = {t for t in encoder_input if t not in FRAMING_IDS}
            if content:
                row = np.zeros(self.vocab_size)
                row[sorted(content)] = 1.0 / len(content)
            else:
                row = self._uniform
            if len(self._overlap_cache) > 4096:
                self._overlap_cache.clear()
            self._overlap_cache[encoder_input] = row
        return row

    def _logprobs(self, ctx: ScorerContext) -> np.ndarray:
        p = self.ngram_probs(ctx.decoder_prefix)
        if self.lam:
            p = (1.0 - self.lam) * p + self.lam * self._overlap(ctx.encoder_input)
        with np.errstate(divide="ignore"):
            return np.log(p)

    def describe(self) -> dict:
        return {"scorer": self.name, "order": self.order, "k": self.k, "lambda": self.lam}

    def to_dict(self) -> dict:
        return {
            "version": SCORER_FORMAT_VERSION,
            "kind": self.name,
            "order": self.order,
            "k": self.k,
            "lambda": self.lam,
            "vocab_fingerprint": self.vocab.fingerprint,
            "counts": [[list(c), sorted([t, n] for t, n in d.items())] for c, d in sorted(self.counts.items())],
        }

    @classmethod
    def from_dict(cls, data: dict, vocab: Vocabulary) -> NGramScorer:
        if data.get("version") != SCORER_FORMAT_VERSION or data.get("kind") != cls.name:
            raise ConfigError("unsupported scorer file")
        if data["vocab_fingerprint"] != vocab.fingerprint:
            raise VocabularyMismatchError("scorer was fitted with a different vocabulary")
        counts = {tuple(c): {t: n for t, n in d} for c, d in data["counts"]}
        return cls(vocab, data["order"], data["k"], data["lambda"], counts)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        doc = self.to_dict()
        if meta is not None:
            doc["meta"] = meta
        Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary) -> NGramScorer:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), vocab)


# --------------------------------------------------------------------------
# Corpus memorization
# --------------------------------------------------------------------------


def split_point(length: int, split_ratio: float = DEFAULT_SPLIT_RATIO) -> int:
    """Encoder-side length ``ceil(ratio * length)``, capped so the target is never empty."""
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError("split_ratio must lie strictly between 0 and 1")
    # round first so 0.7 * 10 does not ceil to 8
    return min(math.ceil(round(split_ratio * length, 9)), length - 1)


def prepare_memorization_examples(corpus: Corpus, split_ratio: float = DEFAULT_SPLIT_RATIO
                                  ) -> list[tuple[TokenSequence, TokenSequence]]:
    """(encoder side, target) pairs: the front of each entry is the input, the rest the target.

    The DONE pseudo-entry is not text and is skipped.
    """
    examples = []
    for entry in corpus:
        if entry.tokens == (DONE_ID,):
            continue
        cut = split_point(len(entry.tokens), split_ratio)
        examples.append((entry.tokens[:cut], entry.tokens[cut:]))
    return examples


def frame_query(tokens: Sequence[int]) -> TokenSequence:
    return (Q_OPEN_ID, *tokens, Q_CLOSE_ID)


def corpus_loglik(scorer: Scorer, corpus: Corpus) -> tuple[float, int]:
    """Total log-likelihood of every entry (END included) as an unconditioned LM, and token count."""
    total = 0.0
    n = 0
    enc = frame_query(())
    for entry in corpus:
        if entry.tokens == (DONE_ID,):
            continue
        target = entry.tokens + (END_ID,)
        for i, tok in enumerate(target):
            total += float(scorer.next_token_logprobs(ScorerContext(enc, entry.tokens[:i]))[tok])
        n += len(target)
    return total, n


@dataclass(frozen=True)
class MemorizationReport:
    n_examples: int
    n_tokens: int
    split_ratio: float
    loglik_per_token_before: float
    loglik_per_token_after: float
    uniform_loglik_per_token: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_memorization(scorer: NGramScorer, corpus: Corpus, split_ratio: float = DEFAULT_SPLIT_RATIO
                     ) -> tuple[NGramScorer, MemorizationReport]:
    """Fit ``scorer`` on the corpus itself, via the front/back memorization split."""
    scorer.check_vocab(corpus.vocab)
    examples = prepare_memorization_examples(corpus, split_ratio)
    if not examples:
        raise ConfigError("empty corpus")
    fitted = scorer.fit(enc + tgt for enc, tgt in examples)
    before, n = corpus_loglik(scorer, corpus)
    after, _ = corpus_loglik(fitted, corpus)
    report = MemorizationReport(
        n_examples=len(examples),
        n_tokens=n,
        split_ratio=split_ratio,
        loglik_per_token_before=before / n,
        loglik_per_token_after=after / n,
        uniform_loglik_per_token=-math.log(scorer.vocab_size),
    )
    return fitted, report
