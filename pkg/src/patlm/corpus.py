"""Corpus loading, normalization, vocabularies, and character-level encoding.

A corpus is plain UTF-8 text, one sentence per line, already tokenized
(words separated by whitespace).  Loading interns every character into a
shared :class:`Alphabet`, normalizes inter-word whitespace to single
spaces, and records the half-open character span of every word token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNK_SYMBOL = "<unk>"
EOS_SYMBOL = "<eos>"
UNK_WORD = "<unk>"
EOS_WORD = "<eos>"

PROFILES = ("ptb", "wikitext2", "raw")


class CorpusError(ValueError):
    """Raised for unreadable, malformed, or inconsistent corpus input."""


class Alphabet:
    """Bijective mapping between character symbols and dense integer ids.

    Symbols are single characters, except for reserved markers (the
    unk-word marker and the end-of-sentence marker) which are multi-char
    strings and therefore can never collide with corpus characters.
    """

    def __init__(self, symbols: list[str] | None = None):
        self._symbols: list[str] = []
        self._ids: dict[str, int] = {}
        if symbols:
            for s in symbols:
                self.intern(s)

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def intern(self, symbol: str) -> int:
        """Return the id of ``symbol``, assigning the next dense id if new."""
        sid = self._ids.get(symbol)
        if sid is None:
            sid = len(self._symbols)
            self._ids[symbol] = sid
            self._symbols.append(symbol)
        return sid

    def id_of(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in alphabet") from None

    def symbol_of(self, sid: int) -> str:
        return self._symbols[sid]

    @property
    def symbols(self) -> list[str]:
        return list(self._symbols)

    def decode(self, ids) -> str:
        """Render a symbol-id sequence as text (reserved markers verbatim)."""
        return "".join(self._symbols[int(i)] for i in ids)


@dataclass
class CharCorpus:
    """Sentences as symbol-id sequences plus word-span annotations.

    ``word_spans[i]`` lists half-open ``(start, end)`` ranges into
    ``sentences[i]``; spans are disjoint, ordered, and separated by
    single boundary (space) symbols.  Immutable after loading.
    """

    sentences: list[np.ndarray]
    word_spans: list[list[tuple[int, int]]]
    profile: str
    alphabet: Alphabet

    @property
    def append_eos(self) -> bool:
        """Whether the word-level stream gets an end-of-sentence token per line."""
        return self.profile == "ptb"

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    def words_of(self, i: int) -> list[str]:
        """Word token strings of sentence ``i`` (reserved markers verbatim)."""
        sent = self.sentences[i]
        return [self.alphabet.decode(sent[a:b]) for a, b in self.word_spans[i]]

    def word_tokens(self):
        """Iterate word token strings in stream order, with eos if the profile appends it."""
        for i in range(len(self.sentences)):
            yield from self.words_of(i)
            if self.append_eos:
                yield EOS_WORD

    def n_word_tokens(self) -> int:
        n = sum(len(s) for s in self.word_spans)
        if self.append_eos:
            n += len(self.sentences)
        return n

    def detokenize(self, i: int) -> str:
        """Reconstruct the normalized text of sentence ``i`` byte-for-byte."""
        return self.alphabet.decode(self.sentences[i])


@dataclass
class WordVocab:
    """Dense word-id mapping with a total unk fallback."""

    words: list[str]
    ids: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ids:
            self.ids = {w: i for i, w in enumerate(self.words)}
        if UNK_WORD not in self.ids:
            raise ValueError("vocabulary must contain the unk word")

    def __len__(self) -> int:
        return len(self.words)

    @property
    def unk_id(self) -> int:
        return self.ids[UNK_WORD]

    def id_of(self, word: str) -> int:
        return self.ids.get(word, self.unk_id)


def wikitext_normalize(line: str) -> str:
    """Remove the spaces inside runs of equality signs used in section titles.

    Every ``"= = ="`` becomes ``"==="`` and every remaining ``"= ="``
    becomes ``"=="``.  The two replacements are repeated to a fixed point
    so the operation is idempotent even on degenerate runs.
    """
    while True:
        out = line.replace("= = =", "===").replace("= =", "==")
        if out == line:
            return out
        line = out


def normalize_line(line: str, profile: str) -> str:
    """Profile normalization plus whitespace collapse (single spaces)."""
    if profile == "wikitext2":
        line = wikitext_normalize(line)
    return " ".join(line.split())


def load_corpus(path, profile: str, alphabet: Alphabet | None = None) -> CharCorpus:
    """Load a one-sentence-per-line text file into a :class:`CharCorpus`.

    Characters are interned into ``alphabet`` (a fresh one if omitted),
    so multiple splits can share a single symbol table.  Blank lines are
    skipped.  For ``profile="ptb"`` the literal token ``<unk>`` is mapped
    to one reserved symbol.  Invalid UTF-8 is rejected with the byte
    position of the offending sequence.
    """
    if profile not in PROFILES:
        raise CorpusError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    if alphabet is None:
        alphabet = Alphabet()

    try:
        raw = open(path, "rb").read()
    except OSError as e:
        raise CorpusError(f"cannot read corpus file {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(
            f"invalid UTF-8 in {path} at byte {e.start}: {e.reason}"
        ) from e

    sentences: list[np.ndarray] = []
    word_spans: list[list[tuple[int, int]]] = []

    for line in text.splitlines():
        tokens = normalize_line(line, profile).split(" ") if line.strip() else []
        if not tokens or tokens == [""]:
            continue
        ids: list[int] = []
        spans: list[tuple[int, int]] = []
        for k, tok in enumerate(tokens):
            if k > 0:
                ids.append(alphabet.intern(" "))
            start = len(ids)
            if profile == "ptb" and tok == UNK_WORD:
                ids.append(alphabet.intern(UNK_SYMBOL))
            else:
                ids.extend(alphabet.intern(ch) for ch in tok)
            spans.append((start, len(ids)))
        sentences.append(np.asarray(ids, dtype=np.int32))
        word_spans.append(spans)

    return CharCorpus(sentences, word_spans, profile, alphabet)


def word_length_percentile(corpus: CharCorpus, p: float) -> int:
    """Nearest-rank percentile of word-token lengths (characters).

    Returns the smallest ``n`` such that at least ``p`` percent of word
    tokens have length <= ``n``.  Computed over tokens, not types.
    """
    if not 0 < p <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    lengths = np.asarray(
        [b - a for spans in corpus.word_spans for a, b in spans], dtype=np.int64
    )
    if lengths.size == 0:
        raise CorpusError("cannot take a word-length percentile of an empty corpus")
    lengths.sort()
    rank = int(np.ceil(p / 100.0 * lengths.size))
    return int(lengths[rank - 1])


def build_word_vocab(corpus: CharCorpus) -> WordVocab:
    """One dense id per distinct word token string, with unk reserved."""
    seen: dict[str, None] = {}
    for w in corpus.word_tokens():
        seen.setdefault(w, None)
    words = list(seen)
    if UNK_WORD not in seen:
        words.append(UNK_WORD)
    return WordVocab(words)


def corpus_stats(corpus: CharCorpus, vocab: WordVocab | None = None) -> dict:
    """Key scalars for the run manifest."""
    stats = {
        "n_sentences": corpus.n_sentences,
        "n_chars": int(sum(len(s) for s in corpus.sentences)),
        "n_word_tokens": corpus.n_word_tokens(),
        "alphabet_size": len(corpus.alphabet),
        "profile": corpus.profile,
    }
    if vocab is not None:
        stats["vocab_size"] = len(vocab)
    return stats
