"""Corpus-constrained generative retrieval."""

__version__ = "0.1.0"

from .corpus_index import (  # noqa: E402
    AllowedNext,
    Corpus,
    CorpusIndex,
    FlatPrefixIndex,
    PrefixTrie,
    build_index,
    build_trie,
    flatten,
    index_from_texts,
)
from .decoder import RetrievalResult, constrained_beam, constrained_greedy, score_sequence  # noqa: E402
from .multistep import MultiStepConfig, MultiStepState, build_step_context, run_multistep  # noqa: E402
from .scorer import NGramScorer, OracleScorer, ScorerContext, UniformScorer, fit_memorization  # noqa: E402
from .vocab import Vocabulary, build_vocabulary  # noqa: E402

__all__ = [
    "AllowedNext", "Corpus", "CorpusIndex", "FlatPrefixIndex", "PrefixTrie", "build_index", "build_trie",
    "flatten", "index_from_texts", "RetrievalResult", "constrained_beam", "constrained_greedy",
    "score_sequence", "MultiStepConfig", "MultiStepState", "build_step_context", "run_multistep",
    "NGramScorer", "OracleScorer", "ScorerContext", "UniformScorer", "fit_memorization", "Vocabulary",
    "build_vocabulary",
]
