"""Seeded synthetic corpora and query sets (stand-ins for the benchmark datasets)."""
from __future__ import annotations

import random
from typing import Sequence

from .metrics import VERDICTS


def words(vocab_size: int) -> list[str]:
    return [f"w{i}" for i in range(vocab_size)]


def random_corpus(rng: random.Random, n_entries: int, vocab_size: int, max_len: int = 6,
                  min_len: int = 1) -> list[str]:
    """Random word sequences; small vocabularies give plenty of shared prefixes.

    Duplicates are possible and left for corpus ingestion to drop.
    """
    vocab = words(vocab_size)
    return [" ".join(rng.choice(vocab) for _ in range(rng.randint(min_len, max_len))) for _ in range(n_entries)]


def chain_corpus(depth: int = 512, n_chains: int = 4, vocab_size: int = 64, seed: int = 0) -> list[str]:
    """``n_chains`` entries of exactly ``depth`` tokens sharing nothing past the first token."""
    rng = random.Random(seed)
    vocab = words(vocab_size)
    out = []
    for c in range(n_chains):
        out.append(" ".join([vocab[c % vocab_size]] + [rng.choice(vocab) for _ in range(depth - 1)]))
    return out


def shared_prefix_corpus(n_entries: int, shared_len: int, tail_len: int = 3) -> list[str]:
    """Every entry starts with the same ``shared_len`` tokens and then diverges at once."""
    head = [f"s{i}" for i in range(shared_len)]
    return [" ".join(head + [f"d{e}"] + [f"t{e}_{j}" for j in range(tail_len - 1)]) for e in range(n_entries)]


def distinct_first_token_corpus(n_entries: int, length: int = 5) -> list[str]:
    return [" ".join([f"first{e}"] + [f"x{j}" for j in range(length - 1)]) for e in range(n_entries)]


SAMUEL = ["Samuel Barker", "Samuel Miller"]

# two-hop bridge example: the second passage is only reachable through the first
BRIDGE_CORPUS = [
    "The Ready Set is an American pop band from Fort Wayne Indiana",
    "Cell is a novel by Stephen King about a signal broadcast over the cell phone network",
    "Fort Wayne is a city in the state of Indiana",
    "Stephen King is an American author of horror novels",
    "The Oberoi family is an Indian family famous for its involvement in hotels",
    "The Oberoi Group is a hotel company with its head office in Delhi",
    "Delhi is the capital territory of India",
    "A dentist is a surgeon who specializes in dentistry",
    "Technological problems are typically handled by IT professionals",
    "Bluetooth is not a physical entity",
]
BRIDGE_QUERIES = [
    {"qid": "q1", "query": "What was The Ready Set and Cell ?", "mode": "fixed", "T": 2,
     "gold": [BRIDGE_CORPUS[0], BRIDGE_CORPUS[1]]},
    {"qid": "q2", "query": "The Oberoi family is part of a hotel company that has a head office in what city ?",
     "mode": "fixed", "T": 2, "gold": [BRIDGE_CORPUS[4], BRIDGE_CORPUS[5]], "answers": ["Delhi"]},
    {"qid": "q3", "query": "Does a dentist treat Bluetooth problems ?", "mode": "dynamic",
     "gold": [BRIDGE_CORPUS[7], BRIDGE_CORPUS[8], BRIDGE_CORPUS[9]]},
]


# --------------------------------------------------------------------------
# Reasoning-graph fixtures
# --------------------------------------------------------------------------


def _fact(s: str, r: str, o: str) -> str:
    return f"{s}; {r}; {o}"


def graph_case(rng: random.Random, label: str, length: int = 3) -> tuple[list[str], str]:
    """A predicted graph (statement texts) and goal that by construction earn ``label``.

    The base graph is a valid chain ``fact, rule, rule, ...`` whose final rule
    concludes the goal; each error label is produced by one targeted edit.
    """
    if label not in VERDICTS:
        raise ValueError(label)
    ent = f"e{rng.randrange(10**6)}"
    props = [f"p{rng.randrange(10**6)}_{i}" for i in range(length)]
    chain = [_fact(ent, "is", props[0])]
    for i in range(1, length):
        chain.append(f"if {_fact(ent, 'is', props[i - 1])} then {_fact(ent, 'is', props[i])}")
    goal = _fact(ent, "is", props[-1])
    if label == "NodeNumError":
        return chain[:1], goal
    if label == "StartNodeError":
        return [_fact("other" + ent, "is", props[0])] + chain[1:], goal
    if label == "EndNodeError":
        return chain, _fact(ent, "is", "never" + props[-1])
    if label == "MissingEdgeError":
        # drop the middle link; start and end still match
        if length < 3:
            chain.append(f"if {_fact(ent, 'is', props[-1])} then {_fact(ent, 'is', props[-1])}")
            return [chain[0], chain[-1]], goal
        return chain[:1] + chain[2:], goal
    return chain, goal


def graph_fixture(n: int, seed: int = 0) -> list[tuple[list[str], str, str]]:
    """``n`` graphs cycling through the five labels: (statements, goal, expected consume-goal label)."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        label = VERDICTS[i % len(VERDICTS)]
        statements, goal = graph_case(rng, label, length=rng.randint(3, 6))
        out.append((statements, goal, label))
    return out


def scripted_dynamic_queries(n: int, corpus_texts: Sequence[str], max_steps: int, seed: int = 0) -> list[dict]:
    """Queries whose oracle script stops (emits DONE) after a random number of steps.

    Some scripts deliberately never emit DONE within ``max_steps``; ``expect_missed``
    records which.
    """
    rng = random.Random(seed)
    out = []
    for i in range(n):
        n_gold = rng.randint(0, min(max_steps + 2, len(corpus_texts)))
        gold = rng.sample(list(corpus_texts), n_gold)
        out.append({"qid": f"d{i:03d}", "query": f"query number {i}", "gold": gold,
                    "expect_missed": n_gold >= max_steps})
    return out
