import pytest

from genret.corpus_index import index_from_texts
from genret.errors import ConfigError, DecodeError
from genret.multistep import MultiStepConfig, build_step_context, evidence_blocks, run_multistep
from genret.scorer import OracleScorer, UniformScorer
from genret.synthetic import BRIDGE_CORPUS, BRIDGE_QUERIES, distinct_first_token_corpus
from genret.vocab import DONE_ID, EV_CLOSE_ID, EV_OPEN_ID, Q_CLOSE_ID, Q_OPEN_ID


def test_step_context_layout():
    assert build_step_context((9, 10), []) == (Q_OPEN_ID, 9, 10, Q_CLOSE_ID)
    assert build_step_context((9,), [(11, 12)]) == (Q_OPEN_ID, 9, Q_CLOSE_ID, EV_OPEN_ID, 11, 12, EV_CLOSE_ID)
    two = build_step_context((9,), [(11,), (12,)])
    assert two[3:] == (EV_OPEN_ID, 11, EV_CLOSE_ID, EV_OPEN_ID, 12, EV_CLOSE_ID)
    assert evidence_blocks([(11,)]) == (EV_OPEN_ID, 11, EV_CLOSE_ID)


class Recording(OracleScorer):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.contexts = []

    def _logprobs(self, ctx):
        self.contexts.append(ctx)
        return super()._logprobs(ctx)


def test_fixed_two_steps_chain_evidence(bridge):
    q = BRIDGE_QUERIES[0]
    sc = Recording.from_texts(bridge.vocab, {None: q["gold"]})
    state = run_multistep(MultiStepConfig("fixed", steps=2), bridge, sc, q["query"])
    assert [bridge.text(s) for s in state.retrieved_ids] == q["gold"]
    step2 = [c for c in sc.contexts if EV_OPEN_ID in c.encoder_input]
    first = bridge.corpus[state.retrieved_ids[0]].tokens
    enc = step2[0].encoder_input
    i = enc.index(EV_OPEN_ID)
    assert enc[i + 1 : i + 1 + len(first)] == first and enc[i + 1 + len(first)] == EV_CLOSE_ID
    assert state.done and not state.missed_done and state.cumulative_logscore == 0.0


def test_decoder_side_context_gives_same_chain(bridge):
    q = BRIDGE_QUERIES[1]
    sc = OracleScorer.from_texts(bridge.vocab, {None: q["gold"]})
    a = run_multistep(MultiStepConfig("fixed", steps=2), bridge, sc, q["query"])
    b = run_multistep(MultiStepConfig("fixed", steps=2, decoder_side_context=True), bridge, sc, q["query"])
    assert a.retrieved_ids == b.retrieved_ids


def test_dynamic_done_first(bridge):
    sc = OracleScorer(bridge.vocab, {None: [(DONE_ID,)]})
    state = run_multistep(MultiStepConfig("dynamic"), bridge, sc, "anything")
    assert state.retrieved == [] and state.done and not state.missed_done
    assert state.done_step.step == 1


def test_dynamic_scripted_stop(bridge):
    q = BRIDGE_QUERIES[2]
    targets = [bridge.vocab.tokenize(t) for t in q["gold"]] + [(DONE_ID,)]
    state = run_multistep(MultiStepConfig("dynamic"), bridge, OracleScorer(bridge.vocab, {None: targets}), q["query"])
    assert [bridge.text(s) for s in state.retrieved_ids] == q["gold"]
    assert state.done_step.step == 4


def test_dynamic_uniform_hand_simulation():
    # all entries 2 tokens with distinct first tokens; DONE is last by seq_id so it never wins a tie
    ix = index_from_texts(distinct_first_token_corpus(5, length=2), add_done=True)
    state = run_multistep(MultiStepConfig("dynamic", max_steps=3), ix, UniformScorer(ix.vocab), "q")
    assert state.retrieved_ids == [0, 1, 2]
    assert state.missed_done and not state.done


def test_dynamic_uniform_done_wins_when_shortest():
    ix = index_from_texts(["a b c", "d e"], add_done=True)
    state = run_multistep(MultiStepConfig("dynamic", max_steps=3, beam_width=3), ix, UniformScorer(ix.vocab), "q")
    assert state.retrieved == [] and state.done


def test_dedup_off_can_repeat(samuel):
    sc = OracleScorer.for_target(samuel.vocab, "Samuel Barker")
    sc = OracleScorer(samuel.vocab, {None: [samuel.corpus[0].tokens] * 3})
    on = run_multistep(MultiStepConfig("fixed", steps=2), samuel, sc, "q")
    off = run_multistep(MultiStepConfig("fixed", steps=2, dedup_retrieved=False), samuel, sc, "q")
    assert on.retrieved_ids == [0, 1] and off.retrieved_ids == [0, 0]


def test_fixed_excludes_done(bridge):
    sc = OracleScorer(bridge.vocab, {None: [(DONE_ID,)]})
    state = run_multistep(MultiStepConfig("fixed", steps=1), bridge, sc, "q")
    assert state.retrieved_ids[0] != bridge.corpus.done_seq_id


def test_config_validation(samuel):
    with pytest.raises(ConfigError):
        MultiStepConfig("sometimes")
    with pytest.raises(ConfigError):
        MultiStepConfig("fixed", steps=0)
    with pytest.raises(ConfigError, match="DONE"):
        run_multistep(MultiStepConfig("dynamic"), samuel, UniformScorer(samuel.vocab), "q")


def test_step_number_in_errors(samuel):
    cfg = MultiStepConfig("fixed", steps=3)
    with pytest.raises(DecodeError, match="step 3"):
        run_multistep(cfg, samuel, UniformScorer(samuel.vocab), "q")
