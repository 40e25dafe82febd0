"""Prefix-state machine over a pattern set, and sentence/word re-encoding.

The state set is the prefix closure of the patterns plus the empty
string.  Reading a sentence symbol by symbol, the machine sits in the
longest state that is a suffix of the text read so far; the transition
for (state, symbol) is therefore the longest state that is a suffix of
their concatenation.  The table is built breadth-first with suffix
links, exactly like an Aho-Corasick goto/fail automaton collapsed into
a dense delta, so construction is O(|states| * |alphabet|) and encoding
is O(1) per input symbol.

Word spans of a sentence are re-encoded by slicing the sentence's state
stream, so a word's state sequence has exactly one state per character
and the stream runs through word boundaries without resetting.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .corpus import Alphabet, CharCorpus, EOS_WORD, WordVocab
from .encoding import EncodedCorpus
from .mining import escape_pattern, unescape_pattern, encode_pattern_text


@dataclass
class PatternAutomaton:
    """Dense-transition prefix automaton for a fixed pattern set."""

    states: list[tuple[int, ...]]        # prefix strings; states[0] == ()
    delta: np.ndarray                    # int32 [n_states, n_symbols]
    suffix_link: np.ndarray              # int32 [n_states]
    pattern_suffixes: list[np.ndarray]   # per state, ids of patterns that are its suffixes
    patterns: list[tuple[int, ...]]
    alphabet: Alphabet
    state_weight: np.ndarray | None = None   # omega(s), filled from a pattern table
    _suffix_csr: sp.csr_matrix | None = field(default=None, repr=False)
    _trans_csr: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_symbols(self) -> int:
        return self.delta.shape[1]

    def suffix_indicator(self) -> sp.csr_matrix:
        """Sparse [n_states, n_patterns] indicator: pattern is a suffix of state."""
        if self._suffix_csr is None:
            rows, cols = [], []
            for s, pats in enumerate(self.pattern_suffixes):
                for p in pats:
                    rows.append(s)
                    cols.append(int(p))
            data = np.ones(len(rows), dtype=np.float64)
            self._suffix_csr = sp.csr_matrix(
                (data, (rows, cols)), shape=(self.n_states, len(self.patterns))
            )
        return self._suffix_csr

    def transition_counts(self) -> sp.csr_matrix:
        """Sparse [n_states, n_states]; entry (s, s') counts symbols with delta(s, a) = s'."""
        if self._trans_csr is None:
            n = self.n_states
            src = np.repeat(np.arange(n, dtype=np.int64), self.n_symbols)
            dst = self.delta.reshape(-1).astype(np.int64)
            data = np.ones(src.shape[0], dtype=np.float64)
            self._trans_csr = sp.csr_matrix((data, (src, dst)), shape=(n, n))
        return self._trans_csr

    def state_weights_for(self, weights: np.ndarray) -> np.ndarray:
        """omega(s) = sum of weights of the patterns that are suffixes of s."""
        return np.asarray(self.suffix_indicator() @ np.asarray(weights, dtype=np.float64))

    def set_weights(self, weights: np.ndarray) -> None:
        self.state_weight = self.state_weights_for(weights)


def build_automaton(patterns: list[tuple[int, ...]], alphabet: Alphabet) -> PatternAutomaton:
    """Build the prefix-state machine for ``patterns`` over ``alphabet``.

    State ids are canonical: breadth-first over the prefix trie with
    children visited in symbol-id order, the empty state first.  Raises
    on empty patterns, duplicate patterns, and out-of-alphabet symbols.
    """
    n_sym = len(alphabet)
    seen: set[tuple[int, ...]] = set()
    pats: list[tuple[int, ...]] = []
    for p in patterns:
        t = tuple(int(x) for x in p)
        if len(t) == 0:
            raise ValueError("empty pattern")
        if any(x < 0 or x >= n_sym for x in t):
            raise ValueError(f"pattern {t} contains a symbol outside the alphabet")
        if t in seen:
            raise ValueError(f"duplicate pattern {t}")
        seen.add(t)
        pats.append(t)

    # Prefix trie with children stored per symbol id.
    children: list[dict[int, int]] = [{}]   # trie-node id -> {symbol: node}
    prefixes: list[tuple[int, ...]] = [()]
    node_of: dict[tuple[int, ...], int] = {(): 0}
    for p in pats:
        node = 0
        for i, a in enumerate(p):
            nxt = children[node].get(a)
            if nxt is None:
                nxt = len(children)
                children.append({})
                prefixes.append(p[: i + 1])
                node_of[p[: i + 1]] = nxt
                children[node][a] = nxt
            node = nxt

    n_states = len(children)
    delta = np.zeros((n_states, n_sym), dtype=np.int32)
    link = np.zeros(n_states, dtype=np.int32)
    pattern_at = {p: i for i, p in enumerate(pats)}

    # BFS: depth-1 states fail to the root; deeper states inherit the
    # failure target's transitions for missing children.
    queue: deque[int] = deque()
    for a in sorted(children[0]):
        c = children[0][a]
        delta[0, a] = c
        link[c] = 0
        queue.append(c)
    own: list[list[int]] = [[] for _ in range(n_states)]
    while queue:
        s = queue.popleft()
        pid = pattern_at.get(prefixes[s])
        if pid is not None:
            own[s].append(pid)
        for a in range(n_sym):
            c = children[s].get(a)
            if c is None:
                delta[s, a] = delta[link[s], a]
            else:
                delta[s, a] = c
                link[c] = delta[link[s], a]
                queue.append(c)

    # Output sets along suffix-link chains, in BFS (increasing-depth) order.
    order = sorted(range(n_states), key=lambda s: len(prefixes[s]))
    suffixes: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * n_states
    for s in order:
        if s == 0:
            continue
        merged = list(suffixes[link[s]]) + own[s]
        suffixes[s] = np.asarray(sorted(merged), dtype=np.int64)

    return PatternAutomaton(prefixes, delta, link, suffixes, pats, alphabet)


def encode_sentence(aut: PatternAutomaton, sentence) -> np.ndarray:
    """State stream of a sentence: one state per symbol, starting from the empty state."""
    seq = np.asarray(sentence, dtype=np.int64)
    if seq.size and (seq.min() < 0 or seq.max() >= aut.n_symbols):
        bad = seq[(seq < 0) | (seq >= aut.n_symbols)][0]
        raise ValueError(f"symbol id {int(bad)} outside the automaton alphabet")
    out = np.empty(seq.size, dtype=np.int32)
    delta = aut.delta
    s = 0
    for i, a in enumerate(seq):
        s = delta[s, a]
        out[i] = s
    return out


def encode_words(
    aut: PatternAutomaton, corpus: CharCorpus, vocab: WordVocab | None = None
) -> EncodedCorpus:
    """Re-encode every word span over the state alphabet.

    The state stream is computed once per sentence and sliced per span,
    so identical words in different left contexts may receive different
    state sequences.  When the corpus profile appends end-of-sentence
    tokens, those get the dedicated subword id ``n_states``.
    """
    from .corpus import build_word_vocab

    if vocab is None:
        vocab = build_word_vocab(corpus)
    word_ids: list[int] = []
    subwords: list[np.ndarray] = []
    n_base = aut.n_states
    eos_id = n_base if corpus.append_eos else None
    eos_seq = np.asarray([n_base], dtype=np.int32)
    for i in range(corpus.n_sentences):
        stream = encode_sentence(aut, corpus.sentences[i])
        for (a, b), w in zip(corpus.word_spans[i], corpus.words_of(i)):
            word_ids.append(vocab.id_of(w))
            subwords.append(stream[a:b])
        if corpus.append_eos:
            word_ids.append(vocab.id_of(EOS_WORD))
            subwords.append(eos_seq)
    n_types = n_base + (1 if eos_id is not None else 0)
    return EncodedCorpus(
        np.asarray(word_ids, dtype=np.int32), subwords, n_types, eos_id, "pattern", vocab
    )


def save_automaton(path, aut: PatternAutomaton) -> None:
    """Structured text: [alphabet], [patterns], [states], [delta], [suffix_links].

    States and patterns are stored as prefix strings (escaped text), not
    ids, so the file is stable across alphabet re-interning; delta rows
    are space-separated state ids in row-major order.
    """
    A = aut.alphabet
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[alphabet]\n")
        for s in A.symbols:
            fh.write(escape_pattern(s) + "\n")
        fh.write("[patterns]\n")
        for p in aut.patterns:
            fh.write(escape_pattern(A.decode(p)) + "\n")
        fh.write("[states]\n")
        for st in aut.states:
            fh.write(escape_pattern(A.decode(st)) + "\n")
        fh.write("[delta]\n")
        for row in aut.delta:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")
        fh.write("[suffix_links]\n")
        for x in aut.suffix_link:
            fh.write(str(int(x)) + "\n")


def load_automaton(path) -> PatternAutomaton:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("[") and line.endswith("]"):
                current = sections.setdefault(line[1:-1], [])
            elif current is not None:
                current.append(line)
    for name in ("alphabet", "patterns", "states", "delta", "suffix_links"):
        if name not in sections:
            raise ValueError(f"automaton file missing section [{name}]")
    alphabet = Alphabet([unescape_pattern(s) for s in sections["alphabet"] if s != ""])
    patterns = [
        encode_pattern_text(unescape_pattern(s), alphabet)
        for s in sections["patterns"]
        if s != ""
    ]
    rebuilt = build_automaton(patterns, alphabet)
    # Consistency check against the stored tables.
    delta = np.asarray(
        [[int(x) for x in row.split()] for row in sections["delta"] if row != ""],
        dtype=np.int32,
    )
    if delta.shape != rebuilt.delta.shape or not np.array_equal(delta, rebuilt.delta):
        raise ValueError("stored delta table disagrees with rebuilt automaton")
    return rebuilt
