"""Retrieval metrics and reasoning-graph validation.

Text comparisons are exact after :func:`~genret.vocab.normalize_text`.
Aggregates are plain means over queries.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Collection, Iterable, Mapping, Sequence

from .errors import ConfigError, InputFormatError
from .vocab import SPECIAL_TOKENS, normalize_text

DONE_TEXT = SPECIAL_TOKENS["DONE"]

VERDICTS = ("NodeNumError", "StartNodeError", "EndNodeError", "MissingEdgeError", "Success")


def _norm_list(texts: Iterable[str]) -> list[str]:
    return [normalize_text(t) for t in texts]


def recall_at_k(predicted: Sequence[str], gold: Collection[str], k: int) -> float:
    """Fraction of gold texts found among the first ``k`` predictions."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    gold_set = set(_norm_list(gold))
    if not gold_set:
        raise ConfigError("recall is undefined for an empty gold set")
    top = set(_norm_list(predicted[:k]))
    return len(gold_set & top) / len(gold_set)


def answer_recall_at_k(predicted: Sequence[str], answers: Collection[str], k: int) -> float:
    """1.0 if any of the first ``k`` predictions contains any gold answer string."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    answers = [a for a in _norm_list(answers) if a]
    top = _norm_list(predicted[:k])
    return float(any(a in p for p in top for a in answers))


def sequence_f1(predicted: Collection[str], gold: Collection[str]) -> tuple[float, float, float]:
    """Set precision, recall and F1. DONE is dropped from the predictions.

    Both sets empty counts as a perfect match (1.0, 1.0, 1.0).
    """
    pred = set(_norm_list(predicted)) - {DONE_TEXT}
    gold_set = set(_norm_list(gold))
    if not pred and not gold_set:
        return 1.0, 1.0, 1.0
    hit = len(pred & gold_set)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold_set) if gold_set else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def missing_done_rate(flags: Iterable[bool]) -> float:
    """Mean of per-query missed-DONE flags (dynamic-mode runs only)."""
    flags = [bool(f) for f in flags]
    if not flags:
        raise ConfigError("no dynamic-mode predictions to evaluate")
    return sum(flags) / len(flags)


def pairwise_similarity(preds_a: Mapping, preds_b: Mapping, k: int) -> float:
    """Mean over queries of ``|top-k(a) & top-k(b)| / k``; both maps keyed by qid."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if set(preds_a) != set(preds_b):
        raise ConfigError("prediction sets cover different qids")
    if not preds_a:
        raise ConfigError("no predictions")
    total = 0.0
    for qid in preds_a:
        a = set(_norm_list(preds_a[qid][:k]))
        b = set(_norm_list(preds_b[qid][:k]))
        total += len(a & b) / k
    return total / len(preds_a)


# --------------------------------------------------------------------------
# Reasoning graphs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Fact:
    subject: str
    relation: str
    obj: str

    def __str__(self) -> str:
        return f"{self.subject}; {self.relation}; {self.obj}"


@dataclass(frozen=True)
class Statement:
    """A fact (``assumptions`` empty, ``result`` is the fact) or a rule."""

    kind: str
    result: Fact
    assumptions: tuple[Fact, ...] = ()

    @property
    def subject(self) -> str:
        return self.assumptions[0].subject if self.kind == "rule" else self.result.subject

    @property
    def obj(self) -> str:
        return self.result.obj


_RULE = re.compile(r"^if\s+(.+)\s+then\s+(.+)$", re.IGNORECASE)


def parse_fact(text: str) -> Fact:
    fields = [f.strip() for f in normalize_text(text).split(";")]
    if len(fields) != 3 or not all(fields):
        raise InputFormatError(f"expected 'subject; relation; object', got {text!r}")
    return Fact(*fields)


def _parse_fact_list(text: str) -> list[Fact]:
    # "a; r; b and c; r2; d": the object/subject boundary splits at the first " and "
    fields = [f.strip() for f in text.split(";")]
    if len(fields) < 3 or len(fields) % 2 == 0:
        raise InputFormatError(f"cannot parse assumptions {text!r}")
    facts = []
    subject = fields[0]
    for i in range(1, len(fields) - 1, 2):
        relation, tail = fields[i], fields[i + 1]
        if i + 2 < len(fields):
            obj, sep, nxt = tail.partition(" and ")
            if not sep:
                raise InputFormatError(f"missing 'and' between assumptions in {text!r}")
        else:
            obj, nxt = tail, ""
        facts.append(Fact(subject, relation, obj))
        subject = nxt
    return facts


def parse_statement(text: str) -> Statement:
    """Parse ``"s; r; o"`` as a fact or ``"if F1 [and F2 ...] then F"`` as a rule."""
    text = normalize_text(text)
    m = _RULE.match(text)
    if m is None:
        return Statement("fact", parse_fact(text))
    assumptions = tuple(_parse_fact_list(m.group(1)))
    return Statement("rule", parse_fact(m.group(2)), assumptions)


def missing_edge_check(statements: Sequence[Statement], goal: Fact | None = None) -> tuple[bool, list[Fact]]:
    """Replay the prediction in order, consuming rule assumptions from a working list.

    Facts are appended; each rule removes one occurrence of every assumption
    (failing immediately if one is absent) and appends its result. The graph
    has no missing edge iff the list ends empty. Passing ``goal`` first removes
    one occurrence of the goal fact (the graph's final conclusion) before the
    emptiness check.
    """
    working: list[Fact] = []
    for s in statements:
        if s.kind == "rule":
            for a in s.assumptions:
                if a in working:
                    working.remove(a)
                else:
                    return False, working
            working.append(s.result)
        else:
            working.append(s.result)
    if goal is not None and goal in working:
        working.remove(goal)
    return not working, working


@dataclass(frozen=True)
class GraphVerdict:
    label: str
    trace: tuple[Fact, ...] = ()


def graph_verdict(statements: Sequence[Statement], goal: Fact, *, min_nodes: int = 2,
                  consume_goal: bool = False) -> GraphVerdict:
    """Classify a predicted graph; checks run in order and the first failure wins."""
    if len(statements) < min_nodes:
        return GraphVerdict("NodeNumError")
    if statements[0].subject != goal.subject:
        return GraphVerdict("StartNodeError")
    if statements[-1].obj != goal.obj:
        return GraphVerdict("EndNodeError")
    ok, residual = missing_edge_check(statements, goal if consume_goal else None)
    return GraphVerdict("Success" if ok else "MissingEdgeError", tuple(residual))


def verdict_rates(verdicts: Iterable[GraphVerdict]) -> dict[str, float]:
    labels = [v.label for v in verdicts]
    if not labels:
        raise ConfigError("no graphs to evaluate")
    return {name: labels.count(name) / len(labels) for name in VERDICTS}


# --------------------------------------------------------------------------
# Report over prediction / gold records
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    n_queries: int
    aggregate: dict[str, float | dict] = field(default_factory=dict)
    per_query: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n_queries": self.n_queries, "aggregate": self.aggregate, "per_query": self.per_query}


def parse_metric_names(spec: str | Sequence[str]) -> list[str]:
    names = spec.split(",") if isinstance(spec, str) else list(spec)
    out = []
    for name in (n.strip() for n in names):
        if not name:
            continue
        if re.fullmatch(r"(recall|answer)@[1-9]\d*", name) or name in ("f1", "missing-done", "graph"):
            out.append(name)
        else:
            raise ConfigError(f"unknown metric {name!r}")
    return out


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def evaluate(preds: Sequence[dict], gold: Sequence[dict], metrics: str | Sequence[str],
             min_nodes: int = 2) -> EvalReport:
    """Score prediction records against query records (matched by qid).

    ``ranked`` texts feed recall and answer recall; the chained ``retrieved``
    texts (falling back to ``ranked``) feed F1 and graph verdicts.
    """
    names = parse_metric_names(metrics)
    gold_by_qid = {g["qid"]: g for g in gold}
    missing = [p["qid"] for p in preds if p["qid"] not in gold_by_qid]
    if missing:
        raise ConfigError(f"predictions for unknown qids: {missing[:5]}")
    per_query = []
    sums: dict[str, list[float]] = {n: [] for n in names if n != "graph"}
    verdicts = {"literal": [], "consume_goal": []}
    for p in preds:
        g = gold_by_qid[p["qid"]]
        ranked = [r["text"] for r in p.get("ranked", [])]
        chain = [r["text"] for r in p["retrieved"]] if "retrieved" in p else ranked
        row: dict = {"qid": p["qid"]}
        for n in names:
            if n.startswith("recall@") and g.get("gold"):
                row[n] = recall_at_k(ranked, g["gold"], int(n[7:]))
            elif n.startswith("answer@") and g.get("answers"):
                row[n] = answer_recall_at_k(ranked, g["answers"], int(n[7:]))
            elif n == "f1" and "gold" in g:
                row["precision"], row["recall"], row[n] = sequence_f1(chain, g["gold"])
            elif n == "missing-done" and p.get("mode") == "dynamic":
                row[n] = float(bool(p.get("missed_done")))
            elif n == "graph" and g.get("goal"):
                statements = [parse_statement(t) for t in chain if normalize_text(t) != DONE_TEXT]
                goal = parse_fact(g["goal"])
                lit = graph_verdict(statements, goal, min_nodes=min_nodes)
                cons = graph_verdict(statements, goal, min_nodes=min_nodes, consume_goal=True)
                verdicts["literal"].append(lit)
                verdicts["consume_goal"].append(cons)
                row["graph"] = {"literal": lit.label, "consume_goal": cons.label}
            if n in row and n in sums:
                sums[n].append(row[n])
        per_query.append(row)
    aggregate: dict = {}
    for n, xs in sums.items():
        aggregate[n] = _mean(xs)
        aggregate[f"{n}.n"] = len(xs)
    if "f1" in names:
        aggregate["precision"] = _mean([r["precision"] for r in per_query if "precision" in r])
        aggregate["recall"] = _mean([r["recall"] for r in per_query if "recall" in r])
    if "graph" in names and verdicts["literal"]:
        aggregate["graph"] = {mode: verdict_rates(v) for mode, v in verdicts.items()}
    return EvalReport(len(preds), aggregate, per_query)
