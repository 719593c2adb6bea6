"""Interleaving ensemble of two ranked prediction lists."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .errors import ConfigError
from .vocab import normalize_text


@dataclass(frozen=True)
class RankedList:
    qid: Hashable
    items: tuple[str, ...]
    sources: tuple[str, ...] = field(default=())

    def __post_init__(self):
        keys = [normalize_text(t) for t in self.items]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"ranked list for qid {self.qid!r} contains duplicates")
        if self.sources and len(self.sources) != len(self.items):
            raise ConfigError("sources must align with items")


def interleave(a: RankedList, b: RankedList, k: int, start: str = "a",
               names: tuple[str, str] = ("a", "b")) -> RankedList:
    """Merge ``a`` and ``b`` by alternating turns, skipping repeats.

    Each turn takes the next not-yet-seen item of the list whose turn it is
    (``a`` first unless ``start == "b"``); once a list runs out the other one
    fills the rest. Output is truncated to ``k`` and every item is tagged with
    the list it came from.
    """
    if a.qid != b.qid:
        raise ConfigError(f"qid mismatch: {a.qid!r} vs {b.qid!r}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if start not in ("a", "b"):
        raise ConfigError("start must be 'a' or 'b'")
    lanes = [(a.items, names[0]), (b.items, names[1])]
    if start == "b":
        lanes.reverse()
    cursors = [0, 0]
    seen: set[str] = set()
    items: list[str] = []
    sources: list[str] = []
    turn = 0
    while len(items) < k and any(cursors[i] < len(lanes[i][0]) for i in (0, 1)):
        lane, name = lanes[turn]
        while cursors[turn] < len(lane):
            item = lane[cursors[turn]]
            cursors[turn] += 1
            key = normalize_text(item)
            if key not in seen:
                seen.add(key)
                items.append(item)
                sources.append(name)
                break
        turn = 1 - turn
    return RankedList(a.qid, tuple(items), tuple(sources))


def interleave_texts(a: Sequence[str], b: Sequence[str], k: int, start: str = "a") -> list[str]:
    return list(interleave(RankedList(None, tuple(a)), RankedList(None, tuple(b)), k, start).items)
