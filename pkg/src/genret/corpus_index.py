"""Corpus ingestion, the prefix trie and the flattened prefix index.

The flat index maps every prefix of every corpus sequence (the empty prefix
included) to the set of tokens allowed next. Keys are a polynomial rolling
hash of the full token-id sequence, so a decoder that carries the key of its
current prefix extends it in O(1) and probes the table exactly once per step,
independent of prefix length. Each entry records its parent key and last
token, which makes a probe along a verified chain exact: distinct corpus
prefixes never share a key (enforced at build time by re-salting the hash),
and a non-prefix can only alias an entry whose (parent, token) differs.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import CorpusError, IndexFormatError, InputFormatError, VocabularyError, VocabularyMismatchError
from .vocab import DONE_ID, END_ID, SPECIAL_TOKENS, TokenSequence, Vocabulary, build_vocabulary, normalize_text

log = logging.getLogger(__name__)

INDEX_FORMAT = "genret-index"
INDEX_FORMAT_VERSION = 1

_MOD = (1 << 61) - 1
_BASES = (1_000_000_007, 998_244_353, 1_099_511_628_211, 2_147_483_647)
ROOT_KEY = 0


def extend_key(key: int, token: int, base: int) -> int:
    return (key * base + token + 1) % _MOD


def prefix_key(prefix: Iterable[int], base: int) -> int:
    key = ROOT_KEY
    for token in prefix:
        key = (key * base + token + 1) % _MOD
    return key


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusEntry:
    seq_id: int
    text: str
    tokens: TokenSequence
    source_id: int | str | None = None


class Corpus:
    """Ordered, deduplicated corpus with dense sequence ids ``0..N-1``."""

    def __init__(self, entries: Sequence[CorpusEntry], vocab: Vocabulary):
        self.entries = list(entries)
        self.vocab = vocab
        self._by_tokens = {e.tokens: e.seq_id for e in self.entries}
        for i, e in enumerate(self.entries):
            if e.seq_id != i:
                raise CorpusError(f"sequence ids must be dense, entry {i} has id {e.seq_id}")

    @classmethod
    def from_texts(
        cls,
        texts: Iterable[str],
        vocab: Vocabulary,
        *,
        add_done: bool = False,
        source_ids: Sequence[int | str | None] | None = None,
    ) -> Corpus:
        """Tokenize and deduplicate ``texts`` (first occurrence wins).

        With ``add_done`` the one-token ``DONE`` pseudo-entry is appended
        (unless already present), making it retrievable for dynamic stopping.
        """
        entries: list[CorpusEntry] = []
        seen: dict[TokenSequence, int] = {}
        texts = list(texts)
        if source_ids is not None and len(source_ids) != len(texts):
            raise CorpusError("source_ids length does not match texts")
        for i, raw in enumerate(texts):
            text = normalize_text(raw)
            if not text:
                raise CorpusError(f"empty corpus entry at position {i}")
            tokens = vocab.tokenize(text)
            if END_ID in tokens:
                raise CorpusError(f"entry {i} contains the reserved {SPECIAL_TOKENS['END']} token")
            if tokens in seen:
                log.warning("duplicate corpus entry %r at position %d dropped (kept seq_id %d)", text, i, seen[tokens])
                continue
            seen[tokens] = len(entries)
            src = source_ids[i] if source_ids is not None else None
            entries.append(CorpusEntry(len(entries), text, tokens, src))
        if add_done and (DONE_ID,) not in seen:
            entries.append(CorpusEntry(len(entries), SPECIAL_TOKENS["DONE"], (DONE_ID,), None))
        if not entries:
            raise CorpusError("empty corpus")
        return cls(entries, vocab)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[CorpusEntry]:
        return iter(self.entries)

    def __getitem__(self, seq_id: int) -> CorpusEntry:
        return self.entries[seq_id]

    def find(self, tokens: Sequence[int]) -> int | None:
        return self._by_tokens.get(tuple(tokens))

    @property
    def done_seq_id(self) -> int | None:
        return self._by_tokens.get((DONE_ID,))

    @property
    def max_length(self) -> int:
        return max(len(e.tokens) for e in self.entries)


def read_corpus_jsonl(path: str | Path) -> tuple[list[str], list[int | str | None]]:
    """Read ``{"id": optional, "text": str}`` records; errors carry the line number."""
    texts: list[str] = []
    ids: list[int | str | None] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"malformed JSON ({exc.msg})", str(path), lineno) from None
            if not isinstance(rec, dict) or not isinstance(rec.get("text"), str):
                raise InputFormatError('expected an object with a string "text" field', str(path), lineno)
            unknown = set(rec) - {"id", "text"}
            if unknown:
                raise InputFormatError(f"unknown keys {sorted(unknown)}", str(path), lineno)
            texts.append(rec["text"])
            ids.append(rec.get("id"))
    if not texts:
        raise CorpusError(f"{path}: empty corpus")
    return texts, ids


# --------------------------------------------------------------------------
# Prefix trie
# --------------------------------------------------------------------------


class TrieNode:
    __slots__ = ("children", "terminal", "count", "min_id", "view")

    def __init__(self) -> None:
        self.children: dict[int, TrieNode] = {}
        # set only on END leaves
        self.terminal: int | None = None
        # number of corpus sequences in this subtree, and the smallest seq_id among them
        self.count = 0
        self.min_id = -1
        self.view: AllowedNext | None = None


@dataclass(frozen=True)
class AllowedNext:
    """Constraint record for one prefix.

    ``terminal`` is the seq_id ending exactly at this prefix (reached by the
    END edge); ``unique_completion`` is set iff exactly one corpus sequence
    extends the prefix. The key fields are bookkeeping for the flat index and
    take no part in equality.
    """

    next_tokens: frozenset[int]
    unique_completion: int | None
    terminal: int | None
    count: int = field(compare=False)
    min_id: int = field(compare=False)
    ordered: tuple[int, ...] = field(compare=False, repr=False)
    depth: int = field(compare=False, default=0)
    key: int | None = field(compare=False, default=None, repr=False)
    parent_key: int | None = field(compare=False, default=None, repr=False)
    last_token: int | None = field(compare=False, default=None, repr=False)


def _allowed_from_node(node: TrieNode, depth: int, key=None, parent_key=None, last_token=None) -> AllowedNext:
    end = node.children.get(END_ID)
    return AllowedNext(
        next_tokens=frozenset(node.children),
        unique_completion=node.min_id if node.count == 1 else None,
        terminal=end.terminal if end is not None else None,
        count=node.count,
        min_id=node.min_id,
        ordered=tuple(sorted(node.children)),
        depth=depth,
        key=key,
        parent_key=parent_key,
        last_token=last_token,
    )


class PrefixTrie:
    """Token trie with END edges; every root-to-END path spells one corpus entry."""

    def __init__(self) -> None:
        self.root = TrieNode()
        self.height = 0
        self.num_sequences = 0

    def insert(self, tokens: Sequence[int], seq_id: int) -> None:
        node = self.root
        path = [node]
        for tok in tokens:
            node = node.children.setdefault(tok, TrieNode())
            path.append(node)
        if END_ID in node.children:
            raise CorpusError(f"sequence {seq_id} duplicates sequence {node.children[END_ID].terminal}")
        leaf = TrieNode()
        leaf.terminal = seq_id
        node.children[END_ID] = leaf
        path.append(leaf)
        for n in path:
            n.count += 1
            if n.min_id < 0 or seq_id < n.min_id:
                n.min_id = seq_id
        self.height = max(self.height, len(tokens) + 1)
        self.num_sequences += 1

    def walk(self, prefix: Iterable[int]) -> TrieNode | None:
        """Follow ``prefix`` from the root, one child lookup per token (O(h))."""
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def lookup(self, prefix: Sequence[int]) -> AllowedNext | None:
        node = self.walk(prefix)
        if node is None or node.terminal is not None:
            return None
        if node.view is None:
            node.view = _allowed_from_node(node, len(prefix))
        return node.view

    def iter_prefixes(self) -> Iterator[tuple[TokenSequence, TrieNode]]:
        """Depth-first over all non-END nodes in ascending token order."""
        stack: list[tuple[TokenSequence, TrieNode]] = [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            yield prefix, node
            for tok in sorted(node.children, reverse=True):
                if tok != END_ID:
                    stack.append((prefix + (tok,), node.children[tok]))


def build_trie(corpus: Corpus | Iterable[Sequence[int]]) -> PrefixTrie:
    trie = PrefixTrie()
    if isinstance(corpus, Corpus):
        for e in corpus:
            trie.insert(e.tokens, e.seq_id)
    else:
        for i, tokens in enumerate(corpus):
            trie.insert(tokens, i)
    if trie.num_sequences == 0:
        raise CorpusError("empty corpus")
    return trie


# --------------------------------------------------------------------------
# Flattened prefix index
# --------------------------------------------------------------------------


class FlatPrefixIndex:
    """Hash table from prefix key to :class:`AllowedNext`.

    ``lookup`` takes a raw prefix (hashes it, then verifies the parent chain).
    The decoder's hot path uses :meth:`root` and :meth:`child`, which carry the
    key along and cost one probe per step.
    """

    def __init__(self, table: dict[int, AllowedNext], base: int, height: int,
                 num_sequences: int, depth_cutoff: int | None = None):
        self.table = table
        self.base = base
        self.height = height
        self.num_sequences = num_sequences
        self.depth_cutoff = depth_cutoff
        self.probes = 0

    def __len__(self) -> int:
        return len(self.table)

    @property
    def root(self) -> AllowedNext:
        return self.table[ROOT_KEY]

    def lookup_key(self, key: int) -> AllowedNext | None:
        self.probes += 1
        return self.table.get(key)

    def child(self, parent: AllowedNext, token: int) -> AllowedNext | None:
        """Entry for ``parent``'s prefix extended by ``token``; ``None`` if absent."""
        self.probes += 1
        entry = self.table.get((parent.key * self.base + token + 1) % _MOD)
        if entry is None or entry.parent_key != parent.key or entry.last_token != token:
            return None
        return entry

    def lookup(self, prefix: Sequence[int]) -> AllowedNext | None:
        """Allowed-next record for ``prefix``, or ``None`` if it is not a corpus prefix."""
        prefix = tuple(prefix)
        if self.depth_cutoff is not None and len(prefix) > self.depth_cutoff:
            return None
        entry = self.lookup_key(prefix_key(prefix, self.base))
        if entry is None or entry.depth != len(prefix):
            return None
        # collision check: replay the stored parent chain
        node = entry
        for tok in reversed(prefix):
            if node.last_token != tok:
                return None
            node = self.table[node.parent_key]
        return entry

    def iter_prefixes(self) -> Iterator[tuple[TokenSequence, AllowedNext]]:
        """Reconstruct every stored prefix (used by audits and tests)."""
        children: dict[int, list[AllowedNext]] = {}
        for e in self.table.values():
            if e.parent_key is not None:
                children.setdefault(e.parent_key, []).append(e)
        stack = [((), self.root)]
        while stack:
            prefix, e = stack.pop()
            yield prefix, e
            for c in sorted(children.get(e.key, ()), key=lambda c: -c.last_token):
                stack.append((prefix + (c.last_token,), c))


def flatten(trie: PrefixTrie, depth_cutoff: int | None = None) -> FlatPrefixIndex:
    """Flatten every trie path into a separate key (up to ``depth_cutoff`` if given)."""
    for base in _BASES:
        table: dict[int, AllowedNext] = {}
        collided = False
        stack: list[tuple[TrieNode, int, int | None, int | None, int]] = [(trie.root, ROOT_KEY, None, None, 0)]
        while stack:
            node, key, parent_key, last_token, depth = stack.pop()
            if key in table:
                collided = True
                break
            table[key] = _allowed_from_node(node, depth, key, parent_key, last_token)
            if depth_cutoff is not None and depth >= depth_cutoff:
                continue
            for tok, child in node.children.items():
                if tok != END_ID:
                    stack.append((child, (key * base + tok + 1) % _MOD, key, tok, depth + 1))
        if not collided:
            return FlatPrefixIndex(table, base, trie.height, trie.num_sequences, depth_cutoff)
        log.warning("prefix hash collision with base %d, re-salting", base)
    raise IndexFormatError("could not build a collision-free prefix table")


# --------------------------------------------------------------------------
# Bundled index (vocabulary + corpus + trie + flat table)
# --------------------------------------------------------------------------


@dataclass
class IndexStats:
    num_sequences: int
    num_prefix_keys: int
    max_depth: int
    trie_build_ns: int
    flat_build_ns: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class CorpusIndex:
    """Everything a decoder needs: vocabulary, corpus texts and both prefix structures."""

    def __init__(self, corpus: Corpus, flat: FlatPrefixIndex, trie: PrefixTrie | None = None,
                 stats: IndexStats | None = None):
        self.corpus = corpus
        self.vocab = corpus.vocab
        self.flat = flat
        if trie is not None:
            self.__dict__["trie"] = trie
        self.stats = stats or IndexStats(len(corpus), len(flat), flat.height, 0, 0)

    @cached_property
    def trie(self) -> PrefixTrie:
        return build_trie(self.corpus)

    @property
    def max_depth(self) -> int:
        return self.flat.height

    def text(self, seq_id: int) -> str:
        return self.corpus[seq_id].text

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        Path(path).write_text(serialize_index(self, meta), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary | None = None) -> CorpusIndex:
        return deserialize_index(Path(path).read_text(encoding="utf-8"), vocab)


def build_index(corpus: Corpus, depth_cutoff: int | None = None) -> CorpusIndex:
    t0 = time.perf_counter_ns()
    trie = build_trie(corpus)
    t1 = time.perf_counter_ns()
    flat = flatten(trie, depth_cutoff)
    t2 = time.perf_counter_ns()
    stats = IndexStats(len(corpus), len(flat), trie.height, t1 - t0, t2 - t1)
    return CorpusIndex(corpus, flat, trie, stats)


def index_from_texts(texts: Iterable[str], mode: str = "word", *, add_done: bool = False,
                     vocab: Vocabulary | None = None, depth_cutoff: int | None = None) -> CorpusIndex:
    """Convenience: vocabulary + corpus + index in one call."""
    texts = list(texts)
    if vocab is None:
        vocab = build_vocabulary(texts, mode)
    return build_index(Corpus.from_texts(texts, vocab, add_done=add_done), depth_cutoff)


def serialize_index(index: CorpusIndex, meta: dict | None = None) -> str:
    flat = index.flat
    order: list[AllowedNext] = []
    position: dict[int, int] = {}
    for _, entry in flat.iter_prefixes():
        position[entry.key] = len(order)
        order.append(entry)
    nodes = [
        [
            -1 if e.parent_key is None else position[e.parent_key],
            -1 if e.last_token is None else e.last_token,
            -1 if e.terminal is None else e.terminal,
            e.count,
            e.min_id,
        ]
        for e in order
    ]
    doc = {
        "format": INDEX_FORMAT,
        "version": INDEX_FORMAT_VERSION,
        "vocab": index.vocab.to_dict(),
        "vocab_fingerprint": index.vocab.fingerprint,
        "corpus": [
            {"seq_id": e.seq_id, "text": e.text, **({"source_id": e.source_id} if e.source_id is not None else {})}
            for e in index.corpus
        ],
        "flat": {
            "base": flat.base,
            "height": flat.height,
            "depth_cutoff": flat.depth_cutoff,
            "nodes": nodes,
        },
    }
    if meta is not None:
        doc["meta"] = meta
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def deserialize_index(data: str, vocab: Vocabulary | None = None) -> CorpusIndex:
    """Inverse of :func:`serialize_index`.

    Raises:
        IndexFormatError: unparseable, truncated or internally inconsistent data,
            or an unsupported version.
        VocabularyMismatchError: ``vocab`` given and differs from the embedded one.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError:
        raise IndexFormatError("corrupt index: not valid JSON (truncated?)") from None
    if not isinstance(doc, dict) or doc.get("format") != INDEX_FORMAT:
        raise IndexFormatError("corrupt index: not a genret index document")
    if doc.get("version") != INDEX_FORMAT_VERSION:
        raise IndexFormatError(f"index version {doc.get('version')!r} unsupported (expected {INDEX_FORMAT_VERSION})")
    try:
        embedded = Vocabulary.from_dict(doc["vocab"])
        if embedded.fingerprint != doc["vocab_fingerprint"]:
            raise IndexFormatError("corrupt index: vocabulary fingerprint does not match its contents")
        if vocab is not None and vocab.fingerprint != embedded.fingerprint:
            raise VocabularyMismatchError("index was built with a different vocabulary")
        entries = [
            CorpusEntry(rec["seq_id"], rec["text"], embedded.tokenize(rec["text"]), rec.get("source_id"))
            for rec in doc["corpus"]
        ]
        corpus = Corpus(entries, embedded)
        f = doc["flat"]
        base = f["base"]
        table: dict[int, AllowedNext] = {}
        keys: list[int] = []
        children: list[list[int]] = []
        rows = f["nodes"]
        for parent, tok, _, _, _ in rows:
            if parent < 0:
                keys.append(ROOT_KEY)
            else:
                keys.append(extend_key(keys[parent], tok, base))
                children[parent].append(tok)
            children.append([])
        for i, (parent, tok, terminal, count, min_id) in enumerate(rows):
            nxt = set(children[i])
            if terminal >= 0:
                nxt.add(END_ID)
            table[keys[i]] = AllowedNext(
                next_tokens=frozenset(nxt),
                unique_completion=min_id if count == 1 else None,
                terminal=terminal if terminal >= 0 else None,
                count=count,
                min_id=min_id,
                ordered=tuple(sorted(nxt)),
                depth=0 if parent < 0 else table[keys[parent]].depth + 1,
                key=keys[i],
                parent_key=None if parent < 0 else keys[parent],
                last_token=None if tok < 0 else tok,
            )
        flat = FlatPrefixIndex(table, base, f["height"], len(corpus), f["depth_cutoff"])
    except (KeyError, TypeError, ValueError, IndexError, VocabularyError) as exc:
        raise IndexFormatError(f"corrupt index: {exc.__class__.__name__}: {exc}") from None
    if len(table) != len(rows) or ROOT_KEY not in table:
        raise IndexFormatError("corrupt index: prefix table inconsistent")
    cutoff = flat.depth_cutoff
    shallow = [e for e in corpus if cutoff is None or len(e.tokens) <= cutoff]
    if sum(1 for e in table.values() if e.terminal is not None) != len(shallow):
        raise IndexFormatError("corrupt index: terminal count does not match the corpus")
    for entry in shallow:
        node = flat.lookup(entry.tokens)
        if node is None or node.terminal != entry.seq_id:
            raise IndexFormatError(f"corrupt index: entry {entry.seq_id} does not match the prefix table")
    flat.probes = 0
    return CorpusIndex(corpus, flat)
