import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from genret.corpus_index import (
    Corpus,
    CorpusIndex,
    build_trie,
    deserialize_index,
    flatten,
    index_from_texts,
    read_corpus_jsonl,
    serialize_index,
)
from genret.errors import CorpusError, IndexFormatError, InputFormatError, VocabularyMismatchError
from genret.synthetic import SAMUEL, random_corpus
from genret.vocab import DONE_ID, END_ID, build_vocabulary

from helpers import random_index


def ids(index, *words):
    return {index.vocab.token_id(w) for w in words}


def test_samuel_trie(samuel):
    trie = samuel.trie
    assert set(trie.root.children) == ids(samuel, "Samuel")
    node = trie.walk(samuel.vocab.tokenize("Samuel"))
    assert set(node.children) == ids(samuel, "Barker", "Miller")


def test_samuel_flat_lookups(samuel):
    flat = samuel.flat
    root = flat.lookup(())
    assert root.next_tokens == ids(samuel, "Samuel") and root.unique_completion is None
    s = flat.lookup(samuel.vocab.tokenize("Samuel"))
    assert s.next_tokens == ids(samuel, "Barker", "Miller") and s.unique_completion is None
    sb = flat.lookup(samuel.vocab.tokenize("Samuel Barker"))
    assert sb.next_tokens == {END_ID}
    assert sb.unique_completion == sb.terminal == 0
    assert flat.lookup(samuel.vocab.tokenize("Miller")) is None
    assert samuel.trie.lookup(samuel.vocab.tokenize("Miller")) is None


def test_samuel_stats(samuel):
    assert (samuel.stats.num_sequences, samuel.stats.max_depth, samuel.stats.num_prefix_keys) == (2, 3, 4)


def test_single_entry():
    ix = index_from_texts(["a"])
    a = ix.vocab.token_id("a")
    assert set(ix.trie.root.children) == {a}
    assert set(ix.trie.walk((a,)).children) == {END_ID}
    assert ix.flat.root.unique_completion == 0


def test_prefix_entry_keeps_both():
    ix = index_from_texts(["a b", "a"])
    a = ix.vocab.token_id("a")
    node = ix.flat.lookup((a,))
    assert node.next_tokens == {END_ID, ix.vocab.token_id("b")}
    assert node.terminal == 1 and node.unique_completion is None and node.count == 2


def test_corpus_dedup_and_done(caplog):
    v = build_vocabulary(["a b"])
    c = Corpus.from_texts(["a b", "a  b", "b"], v, add_done=True)
    assert [e.text for e in c] == ["a b", "b", "DONE"]
    assert c.done_seq_id == 2 and c[2].tokens == (DONE_ID,)
    assert "duplicate" in caplog.text


def test_corpus_rejects_empty_and_end():
    v = build_vocabulary(["a"])
    with pytest.raises(CorpusError):
        Corpus.from_texts(["a", "  "], v)
    with pytest.raises(CorpusError):
        Corpus.from_texts(["a <END>"], v)


def test_trie_every_entry_rewalks_to_its_terminal():
    texts = random_corpus(random.Random(3), 100, 8, max_len=7)
    ix = index_from_texts(texts)
    for e in ix.corpus:
        node = ix.trie.walk(e.tokens)
        assert node.children[END_ID].terminal == e.seq_id
    assert ix.trie.num_sequences == len(ix.corpus)


def test_trie_rejects_duplicates():
    with pytest.raises(CorpusError):
        build_trie([(7, 8), (7, 8)])


def _equivalent(ix, probe_rng=None):
    flat, trie = ix.flat, ix.trie
    seen = set()
    for e in ix.corpus:
        for d in range(len(e.tokens) + 1):
            p = e.tokens[:d]
            seen.add(p)
            a, b = trie.lookup(p), flat.lookup(p)
            assert a is not None and a == b
            assert (a.count, a.min_id) == (b.count, b.min_id)
    assert len(flat) == len(seen)
    content = range(len(ix.vocab))
    for p in seen:
        for t in content:
            q = p + (t,)
            if q not in seen:
                assert trie.lookup(q) is None and flat.lookup(q) is None


def test_exhaustive_equivalence_with_one_token_non_prefixes():
    for seed in range(10):
        _equivalent(random_index(seed))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(7, 12), min_size=1, max_size=5), min_size=1, max_size=25, unique_by=tuple))
def test_flatten_matches_trie_property(seqs):
    trie = build_trie(seqs)
    flat = flatten(trie)
    for i, s in enumerate(seqs):
        for d in range(len(s) + 1):
            assert flat.lookup(s[:d]) == trie.lookup(s[:d])
        assert flat.lookup(s).terminal == i


def test_flat_child_follows_chain(samuel):
    flat = samuel.flat
    node = flat.root
    for tok in samuel.corpus[1].tokens:
        node = flat.child(node, tok)
    assert node.terminal == 1
    assert flat.child(flat.root, samuel.vocab.token_id("Miller")) is None


def test_depth_cutoff_limits_table():
    ix = index_from_texts(["a b c d", "a b x"], depth_cutoff=2)
    assert max(e.depth for e in ix.flat.table.values()) == 2
    assert ix.flat.lookup(ix.vocab.tokenize("a b c")) is None


def test_round_trip_byte_identical(samuel):
    data = serialize_index(samuel)
    assert serialize_index(deserialize_index(data)) == data


def test_round_trip_10k_entries():
    texts = random_corpus(random.Random(11), 10_000, 64, max_len=8)
    ix = index_from_texts(texts)
    back = deserialize_index(serialize_index(ix))
    assert len(back.corpus) == len(ix.corpus)
    assert {k: v for k, v in back.flat.iter_prefixes()} == {k: v for k, v in ix.flat.iter_prefixes()}
    for e in ix.corpus:
        assert back.flat.lookup(e.tokens) == ix.flat.lookup(e.tokens)


def test_truncated_and_tampered(samuel):
    data = serialize_index(samuel)
    with pytest.raises(IndexFormatError, match="corrupt index"):
        deserialize_index(data[: len(data) // 2])
    doc = json.loads(data)
    doc["corpus"][0]["text"] = "Samuel Miller"
    doc["corpus"][1]["text"] = "Samuel Barker"
    with pytest.raises(IndexFormatError, match="corrupt index"):
        deserialize_index(json.dumps(doc))
    doc = json.loads(data)
    doc["version"] = 2
    with pytest.raises(IndexFormatError, match="unsupported"):
        deserialize_index(json.dumps(doc))
    doc = json.loads(data)
    del doc["flat"]["nodes"][-1]
    with pytest.raises(IndexFormatError, match="corrupt index"):
        deserialize_index(json.dumps(doc))


def test_vocab_mismatch_on_load(samuel, tmp_path):
    path = tmp_path / "ix.json"
    samuel.save(path, meta={"note": 1})
    assert CorpusIndex.load(path, samuel.vocab).corpus[0].text == "Samuel Barker"
    with pytest.raises(VocabularyMismatchError):
        CorpusIndex.load(path, build_vocabulary(["other words"]))


def test_read_corpus_jsonl(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": 5, "text": "a b"}\n\n{"text": "c"}\n')
    assert read_corpus_jsonl(p) == (["a b", "c"], [5, None])
    p.write_text('{"text": "a"}\n{"text": "b"\n')
    with pytest.raises(InputFormatError, match=r"c\.jsonl:2"):
        read_corpus_jsonl(p)
    p.write_text('{"text": "a", "title": "x"}\n')
    with pytest.raises(InputFormatError, match="unknown keys"):
        read_corpus_jsonl(p)
