"""Vocabulary, tokenization and the reserved special tokens.

Two tokenization modes are supported: ``word`` (whitespace-delimited words)
and ``char`` (one token per character). Special tokens are atomic and always
occupy the lowest ids in a fixed order, so their ids are identical across
every vocabulary.
"""
from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from functools import cached_property
from typing import Iterable, Sequence

from .errors import UnknownTokenError, VocabularyError

TokenSequence = tuple[int, ...]

VOCAB_FORMAT_VERSION = 1

# name -> surface form; order fixes the ids
SPECIAL_TOKENS: dict[str, str] = {
    "END": "<END>",
    "DONE": "DONE",
    "Q_OPEN": "<QUESTION>",
    "Q_CLOSE": "</QUESTION>",
    "EV_OPEN": "<EVIDENCE>",
    "EV_CLOSE": "</EVIDENCE>",
    "UNK": "<UNK>",
}
END_ID, DONE_ID, Q_OPEN_ID, Q_CLOSE_ID, EV_OPEN_ID, EV_CLOSE_ID, UNK_ID = range(len(SPECIAL_TOKENS))
NUM_SPECIALS = len(SPECIAL_TOKENS)
# tokens that only frame inputs; never part of retrievable text
FRAMING_IDS = frozenset({END_ID, Q_OPEN_ID, Q_CLOSE_ID, EV_OPEN_ID, EV_CLOSE_ID, UNK_ID})

MODES = ("word", "char")

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """NFC-normalize and collapse runs of whitespace to a single space."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def _split(text: str, mode: str) -> list[str]:
    if mode == "word":
        return text.split()
    if text in _SURFACE_TO_ID:
        return [text]
    return list(text)


_SURFACE_TO_ID = {surface: i for i, surface in enumerate(SPECIAL_TOKENS.values())}


class Vocabulary:
    """Bidirectional token <-> id map. Immutable after construction.

    Content tokens get ids ``NUM_SPECIALS + position`` in first-occurrence
    order. ``unknown`` selects the policy for out-of-vocabulary tokens:
    ``"closed"`` raises, ``"unk"`` maps them to the reserved UNK id.
    """

    def __init__(self, tokens: Sequence[str], mode: str = "word", unknown: str = "closed"):
        if mode not in MODES:
            raise VocabularyError(f"unknown tokenization mode {mode!r}")
        if unknown not in ("closed", "unk"):
            raise VocabularyError(f"unknown-token policy must be 'closed' or 'unk', got {unknown!r}")
        self.mode = mode
        self.unknown = unknown
        self._id_to_token: list[str] = list(SPECIAL_TOKENS.values())
        self._token_to_id: dict[str, int] = dict(_SURFACE_TO_ID)
        for tok in tokens:
            if tok in self._token_to_id:
                raise VocabularyError(f"duplicate or reserved token {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.fingerprint == other.fingerprint

    def __hash__(self) -> int:
        return hash(self.fingerprint)

    def __repr__(self) -> str:
        return f"Vocabulary(mode={self.mode!r}, size={len(self)})"

    @property
    def content_tokens(self) -> list[str]:
        return self._id_to_token[NUM_SPECIALS:]

    def token_id(self, token: str, unknown: str | None = None) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            if (unknown or self.unknown) == "unk":
                return UNK_ID
            raise UnknownTokenError(token) from None

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise VocabularyError(f"token id {token_id} out of range for vocabulary of size {len(self)}")
        return self._id_to_token[token_id]

    def tokenize(self, text: str, unknown: str | None = None) -> TokenSequence:
        """Token ids for ``text``; ``unknown`` overrides the vocabulary's OOV policy."""
        return tuple(self.token_id(t, unknown) for t in _split(text, self.mode))

    def detokenize(self, tokens: Iterable[int]) -> str:
        sep = " " if self.mode == "word" else ""
        return sep.join(self.token(t) for t in tokens)

    def to_dict(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "mode": self.mode,
            "unknown": self.unknown,
            "specials": dict(SPECIAL_TOKENS),
            "tokens": self.content_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Vocabulary:
        if not isinstance(data, dict) or data.get("version") != VOCAB_FORMAT_VERSION:
            raise VocabularyError(f"unsupported vocabulary version {data.get('version') if isinstance(data, dict) else None!r}")
        if data.get("specials") != SPECIAL_TOKENS:
            raise VocabularyError("vocabulary specials do not match this build")
        return cls(data["tokens"], mode=data["mode"], unknown=data.get("unknown", "closed"))

    @cached_property
    def fingerprint(self) -> str:
        """sha256 over the canonical JSON form; guards against cross-vocabulary loads."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_vocabulary(texts: Iterable[str], mode: str = "word", unknown: str = "closed") -> Vocabulary:
    """Collect every token occurring in ``texts``.

    Raises:
        VocabularyError: if the texts contain no tokens at all.
    """
    if mode not in MODES:
        raise VocabularyError(f"unknown tokenization mode {mode!r}")
    seen: dict[str, None] = {}
    for text in texts:
        for tok in _split(normalize_text(text), mode):
            if tok not in _SURFACE_TO_ID:
                seen.setdefault(tok, None)
    if not seen:
        raise VocabularyError("empty corpus")
    return Vocabulary(list(seen), mode=mode, unknown=unknown)


def tokenize_query(vocab: Vocabulary, text: str) -> TokenSequence:
    """Queries are open-vocabulary: words absent from the corpus map to UNK."""
    return vocab.tokenize(normalize_text(text), unknown="unk")
