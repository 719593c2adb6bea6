"""Single-, fixed- and dynamic-step retrieval.

Each step decodes one corpus entry; the top-ranked one is chained into the
next step's input as an evidence block::

    Q_OPEN q Q_CLOSE (EV_OPEN p_1 EV_CLOSE) ... (EV_OPEN p_{t-1} EV_CLOSE)

Dynamic mode keeps going until the DONE pseudo-entry wins a step or
``max_steps`` is reached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus_index import CorpusIndex
from .decoder import RetrievalResult, constrained_beam, constrained_greedy
from .errors import ConfigError, DecodeError
from .scorer import Scorer
from .vocab import EV_CLOSE_ID, EV_OPEN_ID, Q_CLOSE_ID, Q_OPEN_ID, TokenSequence, tokenize_query

MODES = ("single", "fixed", "dynamic")
DEFAULT_MAX_STEPS = 20
GRAPH_MAX_STEPS = 10


@dataclass(frozen=True)
class MultiStepConfig:
    mode: str = "single"
    steps: int = 1
    max_steps: int = DEFAULT_MAX_STEPS
    beam_width: int = 1
    dedup_retrieved: bool = True
    early_stop: bool = False
    max_length: int | None = None
    decoder_side_context: bool = False
    lookup: str = "flat"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "fixed" and self.steps < 1:
            raise ConfigError("fixed mode needs steps >= 1")
        if self.max_steps < 1 or self.beam_width < 1:
            raise ConfigError("max_steps and beam_width must be >= 1")

    @property
    def step_budget(self) -> int:
        return {"single": 1, "fixed": self.steps, "dynamic": self.max_steps}[self.mode]


@dataclass(frozen=True)
class RetrievedStep:
    step: int
    seq_id: int
    logscore: float


@dataclass
class MultiStepState:
    query: TokenSequence
    retrieved: list[RetrievedStep] = field(default_factory=list)
    step_results: list[list[tuple[int, float]]] = field(default_factory=list)
    done: bool = False
    missed_done: bool = False
    done_step: RetrievedStep | None = None
    steps_scored: int = 0
    early_stopped: bool = False

    @property
    def retrieved_ids(self) -> list[int]:
        return [r.seq_id for r in self.retrieved]

    @property
    def cumulative_logscore(self) -> float:
        total = sum(r.logscore for r in self.retrieved)
        if self.done_step is not None:
            total += self.done_step.logscore
        return total

    @property
    def num_steps(self) -> int:
        return len(self.retrieved) + (self.done_step is not None)

    def context(self, index: CorpusIndex) -> TokenSequence:
        return build_step_context(self.query, [index.corpus[s].tokens for s in self.retrieved_ids])


def build_step_context(query: Sequence[int], retrieved: Sequence[Sequence[int]]) -> TokenSequence:
    out = [Q_OPEN_ID, *query, Q_CLOSE_ID]
    for p in retrieved:
        out += [EV_OPEN_ID, *p, EV_CLOSE_ID]
    return tuple(out)


def evidence_blocks(retrieved: Sequence[Sequence[int]]) -> TokenSequence:
    out: list[int] = []
    for p in retrieved:
        out += [EV_OPEN_ID, *p, EV_CLOSE_ID]
    return tuple(out)


def finish_state(state: MultiStepState, cfg: MultiStepConfig) -> MultiStepState:
    if cfg.mode != "dynamic":
        state.done = True
    elif not state.done:
        state.missed_done = True
    return state


def run_multistep(cfg: MultiStepConfig, index: CorpusIndex, scorer: Scorer,
                  query: str | Sequence[int]) -> MultiStepState:
    """Retrieve one entry per step, chaining each top-1 into the next input.

    Decoder failures are re-raised as :class:`DecodeError` tagged with the
    1-based step number.
    """
    q = tokenize_query(index.vocab, query) if isinstance(query, str) else tuple(query)
    done_id = index.corpus.done_seq_id
    if cfg.mode == "dynamic" and done_id is None:
        raise ConfigError("dynamic mode needs the DONE entry in the corpus")
    state = MultiStepState(q)
    for t in range(1, cfg.step_budget + 1):
        evidence = [index.corpus[s].tokens for s in state.retrieved_ids]
        if cfg.decoder_side_context:
            enc, dctx = build_step_context(q, ()), evidence_blocks(evidence)
        else:
            enc, dctx = build_step_context(q, evidence), ()
        exclude = set(state.retrieved_ids) if cfg.dedup_retrieved else set()
        if cfg.mode != "dynamic" and done_id is not None:
            exclude.add(done_id)
        try:
            result = _decode(cfg, index, scorer, enc, dctx, exclude)
        except DecodeError as exc:
            raise DecodeError(str(exc), step=t) from exc
        state.step_results.append(result.ranked)
        state.steps_scored += result.steps_scored
        state.early_stopped |= result.early_stopped
        seq_id, score = result.top
        if cfg.mode == "dynamic" and seq_id == done_id:
            state.done_step = RetrievedStep(t, seq_id, score)
            state.done = True
            break
        state.retrieved.append(RetrievedStep(t, seq_id, score))
    return finish_state(state, cfg)


def _decode(cfg: MultiStepConfig, index: CorpusIndex, scorer: Scorer, enc, dctx, exclude) -> RetrievalResult:
    if cfg.beam_width == 1:
        return constrained_greedy(index, scorer, enc, cfg.max_length, cfg.early_stop,
                                  lookup=cfg.lookup, exclude=exclude, decoder_context=dctx)
    return constrained_beam(index, scorer, enc, cfg.beam_width, cfg.max_length, cfg.early_stop,
                            lookup=cfg.lookup, exclude=exclude, decoder_context=dctx)
