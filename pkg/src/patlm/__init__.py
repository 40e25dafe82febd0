"""Pattern mining, pattern-state word encoding, and subword-aware language models."""

from .corpus import (
    Alphabet,
    CharCorpus,
    WordVocab,
    build_word_vocab,
    load_corpus,
    wikitext_normalize,
    word_length_percentile,
)
from .encoding import EncodedCorpus, encode_chars
from .mining import CandidateSet, count_frequent_substrings, mine_patterns, reduce_candidates
from .automaton import PatternAutomaton, build_automaton, encode_sentence, encode_words
from .crf import (
    PatternTable,
    count_occurrences,
    energy,
    expected_counts,
    log_partition,
    nll_and_grad,
    select_patterns,
)
from .owlqn import OwlqnConfig, minimize, pseudo_gradient
from .lm import LMConfig, LMParams, compose, dropout_rates, variational_dropout_masks
from .training import TrainConfig, init_params, make_batches, train
from .evaluation import GateStats, gate_stats, param_count, perplexity

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "CharCorpus", "WordVocab", "build_word_vocab", "load_corpus",
    "wikitext_normalize", "word_length_percentile",
    "EncodedCorpus", "encode_chars",
    "CandidateSet", "count_frequent_substrings", "mine_patterns", "reduce_candidates",
    "PatternAutomaton", "build_automaton", "encode_sentence", "encode_words",
    "PatternTable", "count_occurrences", "energy", "expected_counts",
    "log_partition", "nll_and_grad", "select_patterns",
    "OwlqnConfig", "minimize", "pseudo_gradient",
    "LMConfig", "LMParams", "compose", "dropout_rates", "variational_dropout_masks",
    "TrainConfig", "init_params", "make_batches", "train",
    "GateStats", "gate_stats", "param_count", "perplexity",
]
