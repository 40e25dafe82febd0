"""Unconditional log-linear model over fixed-length symbol strings.

The energy of a string is the weighted count of pattern occurrences, so
the probability of a length-K string y is exp(-E(y)) / Z_K.  Both the
per-length log-partition and the expected pattern counts are computed
by dynamic programming over the prefix-state machine: an occurrence of
a pattern ends at position t exactly when the pattern is a suffix of
the machine state after reading t symbols, so each transition into a
state s' carries the factor exp(-omega(s')) with omega(s') the summed
weight of the patterns ending there.

Because the model is unconditional, the partition value and expected
counts depend only on the string length.  A single forward sweep with
per-step rescaling serves every length at once (log Z_K is the
accumulated log-scale at step K), and the backward vectors depend only
on the number of remaining steps, so one backward sweep serves every
length too.  Per-cut products f_t * g_{K-t} renormalize exactly to the
state-visit marginals, which keeps the whole computation overflow-free.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .automaton import PatternAutomaton, build_automaton
from .corpus import Alphabet, CharCorpus
from .mining import escape_pattern, unescape_pattern, encode_pattern_text
from . import owlqn


@dataclass
class PatternTable:
    """Candidate patterns with their trained weights and selection mask."""

    patterns: list[tuple[int, ...]]
    weights: np.ndarray
    reg_C: float
    alphabet: Alphabet | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.patterns):
            raise ValueError("one weight per pattern required")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("pattern weights must be finite")

    @property
    def selected(self) -> np.ndarray:
        return self.weights != 0.0

    def __len__(self) -> int:
        return len(self.patterns)


def select_patterns(table: PatternTable) -> list[tuple[int, ...]]:
    """Exactly the patterns whose weight is nonzero (no epsilon)."""
    return [p for p, keep in zip(table.patterns, table.selected) if keep]


def count_occurrences(pattern, sentence) -> int:
    """Number of (possibly overlapping) occurrence positions of pattern."""
    pat = tuple(int(x) for x in pattern)
    if len(pat) == 0:
        raise ValueError("empty pattern")
    seq = np.asarray(sentence, dtype=np.int64)
    m = len(pat)
    if seq.size < m:
        return 0
    windows = np.lib.stride_tricks.sliding_window_view(seq, m)
    return int((windows == np.asarray(pat)).all(axis=1).sum())


def energy(sentence, table: PatternTable) -> float:
    """E(y) = sum over patterns of weight * occurrence count."""
    total = 0.0
    for p, c in zip(table.patterns, table.weights):
        if c != 0.0:
            total += c * count_occurrences(p, sentence)
    return total


@dataclass
class LengthTable:
    """Per-length log-partition values and expected pattern counts.

    Valid for one weight vector; ``weights_version`` tags the weights the
    table was computed from so stale tables are never reused.
    """

    log_z: dict[int, float]
    expected: dict[int, np.ndarray]
    weights_version: bytes

    def log_partition(self, K: int) -> float:
        return self.log_z[K]

    def expected_counts(self, K: int) -> np.ndarray:
        return self.expected[K]


def _weights_version(weights: np.ndarray) -> bytes:
    return np.asarray(weights, dtype=np.float64).tobytes()


def compute_length_table(
    aut: PatternAutomaton,
    weights: np.ndarray,
    lengths,
    need_expected: bool = True,
    threads: int = 1,
) -> LengthTable:
    """One forward and one backward sweep covering every requested length."""
    lengths = sorted(set(int(K) for K in lengths))
    if any(K < 0 for K in lengths):
        raise ValueError("lengths must be nonnegative")
    n_pat = len(aut.patterns)
    if not lengths:
        return LengthTable({}, {}, _weights_version(weights))
    k_max = max(lengths)

    omega = aut.state_weights_for(weights)
    wfac = np.exp(-omega)                 # arrival factor per state
    T = aut.transition_counts()           # [s, s'] multiplicity
    n = aut.n_states

    # Forward: f_t(s') = sum_s f_{t-1}(s) T[s,s'] * wfac(s'), rescaled to
    # sum 1 each step; the accumulated log-scale at step K is log Z_K.
    fhat = np.zeros((k_max + 1, n), dtype=np.float64)
    fhat[0, 0] = 1.0
    log_scale = np.zeros(k_max + 1, dtype=np.float64)
    for t in range(1, k_max + 1):
        v = (fhat[t - 1] @ T) * wfac
        tot = v.sum()
        if tot <= 0 or not np.isfinite(tot):
            raise FloatingPointError("forward recursion left the representable range")
        fhat[t] = v / tot
        log_scale[t] = log_scale[t - 1] + np.log(tot)
    log_z = {K: float(log_scale[K]) for K in lengths}

    expected: dict[int, np.ndarray] = {}
    if need_expected:
        # Backward: g_r(s) = sum over r more steps, depends only on r.
        ghat = np.zeros((k_max + 1, n), dtype=np.float64)
        ghat[0] = 1.0 / n
        for r in range(1, k_max + 1):
            v = T @ (wfac * ghat[r - 1])
            tot = v.sum()
            if tot <= 0 or not np.isfinite(tot):
                raise FloatingPointError("backward recursion left the representable range")
            ghat[r] = v / tot

        suffix_ind = aut.suffix_indicator()

        def expected_for(K: int) -> np.ndarray:
            if K == 0:
                return np.zeros(n_pat, dtype=np.float64)
            # u(s): expected number of visits to s over steps 1..K; each
            # cut renormalizes exactly because sum_s f_t(s) g_{K-t}(s) = Z_K.
            u = np.zeros(n, dtype=np.float64)
            for t in range(1, K + 1):
                prod = fhat[t] * ghat[K - t]
                u += prod / prod.sum()
            return np.asarray(u @ suffix_ind).reshape(-1)

        if threads > 1 and len(lengths) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(expected_for, lengths))
            for K, e in zip(lengths, results):
                expected[K] = e
        else:
            for K in lengths:
                expected[K] = expected_for(K)

    return LengthTable(log_z, expected, _weights_version(weights))


def log_partition(K: int, aut: PatternAutomaton, table: PatternTable) -> float:
    """log of the sum of exp(-E) over all strings of length K."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    lt = compute_length_table(aut, table.weights, [K], need_expected=False)
    return lt.log_partition(K)


def expected_counts(K: int, aut: PatternAutomaton, table: PatternTable) -> np.ndarray:
    """Model expectation of each pattern's occurrence count at length K."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    lt = compute_length_table(aut, table.weights, [K])
    return lt.expected_counts(K)


@dataclass
class CorpusStats:
    """Weight-independent sufficient statistics of a training corpus."""

    length_counts: dict[int, int]        # sentence length -> multiplicity
    data_counts: np.ndarray              # summed occurrence counts per pattern
    n_sentences: int


def corpus_statistics(corpus: CharCorpus, aut: PatternAutomaton) -> CorpusStats:
    """Count pattern occurrences by walking each sentence through the machine."""
    from .automaton import encode_sentence

    visits = np.zeros(aut.n_states, dtype=np.float64)
    length_counts: dict[int, int] = {}
    for sent in corpus.sentences:
        K = len(sent)
        length_counts[K] = length_counts.get(K, 0) + 1
        if K:
            states = encode_sentence(aut, sent)
            visits += np.bincount(states, minlength=aut.n_states)
    data_counts = np.asarray(visits @ aut.suffix_indicator()).reshape(-1)
    return CorpusStats(length_counts, data_counts, corpus.n_sentences)


def nll_and_grad(
    corpus: CharCorpus,
    aut: PatternAutomaton,
    table: PatternTable,
    stats: CorpusStats | None = None,
    threads: int = 1,
) -> tuple[float, np.ndarray]:
    """Smooth part of the training objective and its gradient.

    Value: sum over sentences of E(y) + log Z_K, grouped by length so
    the DP runs once per distinct K.  Gradient per pattern: observed
    count minus summed model expectation.  The L1 term belongs to the
    optimizer, not here.
    """
    if aut.patterns != table.patterns:
        raise ValueError("automaton was built over a different pattern list")
    if stats is None:
        stats = corpus_statistics(corpus, aut)
    n_pat = len(table.patterns)
    if stats.n_sentences == 0:
        return 0.0, np.zeros(n_pat, dtype=np.float64)
    lengths = [K for K in stats.length_counts if K > 0]
    lt = compute_length_table(aut, table.weights, lengths, threads=threads)
    value = float(table.weights @ stats.data_counts)
    grad = stats.data_counts.copy()
    for K, m in stats.length_counts.items():
        if K == 0:
            continue
        value += m * lt.log_partition(K)
        grad -= m * lt.expected_counts(K)
    return value, grad


@dataclass
class CrfFitResult:
    table: PatternTable
    automaton: PatternAutomaton
    optimizer: owlqn.OwlqnResult
    n_selected: int = field(init=False)

    def __post_init__(self):
        self.n_selected = int(np.count_nonzero(self.table.weights))


def fit(
    corpus: CharCorpus,
    patterns: list[tuple[int, ...]],
    reg_C: float,
    cfg: owlqn.OwlqnConfig | None = None,
    threads: int = 1,
) -> CrfFitResult:
    """Train the pattern weights by OWL-QN on the L1-regularized likelihood."""
    import dataclasses

    cfg = dataclasses.replace(cfg or owlqn.OwlqnConfig(), lam=float(reg_C))
    aut = build_automaton(patterns, corpus.alphabet)
    stats = corpus_statistics(corpus, aut)

    def objective(w: np.ndarray):
        t = PatternTable(patterns, w, reg_C, corpus.alphabet)
        return nll_and_grad(corpus, aut, t, stats=stats, threads=threads)

    x0 = np.zeros(len(patterns), dtype=np.float64)
    res = owlqn.minimize(objective, x0, cfg)
    table = PatternTable(patterns, res.x, reg_C, corpus.alphabet)
    return CrfFitResult(table, aut, res)


def save_table(path, table: PatternTable) -> None:
    """One record per pattern: escaped pattern, full-precision weight, selected flag."""
    if table.alphabet is None:
        raise ValueError("pattern table has no alphabet attached")
    with open(path, "w", encoding="utf-8") as fh:
        for p, w, s in zip(table.patterns, table.weights, table.selected):
            text = escape_pattern(table.alphabet.decode(p))
            fh.write(f"{text}\t{float(w)!r}\t{int(s)}\n")


def load_table(path, alphabet: Alphabet, reg_C: float = 0.0) -> PatternTable:
    patterns: list[tuple[int, ...]] = []
    weights: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            text, weight, flag = line.split("\t")
            patterns.append(encode_pattern_text(unescape_pattern(text), alphabet))
            weights.append(float(weight))
            if bool(int(flag)) != (weights[-1] != 0.0):
                raise ValueError(f"selection flag disagrees with weight on {text!r}")
    return PatternTable(patterns, np.asarray(weights), reg_C, alphabet)
