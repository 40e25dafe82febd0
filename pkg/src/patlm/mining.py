"""Frequent-substring candidate mining and the co-occurrence reduction.

Candidates are every substring of the corpus sentences (boundary symbols
included, word boundaries freely crossed) of length up to ``L_max``
whose occurrence count, overlaps included, exceeds the threshold ``f``.
The reduction then drops any candidate that is a proper subword of
another candidate and never occurs outside that candidate's occurrences,
since such a substring carries no information of its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Alphabet, CharCorpus

_SEP = -1  # sentence separator in the concatenated symbol stream


@dataclass
class CandidateSet:
    """Mined candidate patterns with their occurrence counts."""

    patterns: list[tuple[int, ...]]
    counts: list[int]
    f: int
    L_max: int
    alphabet: Alphabet | None = None
    index: dict[tuple[int, ...], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {p: i for i, p in enumerate(self.patterns)}

    def __len__(self) -> int:
        return len(self.patterns)

    def __contains__(self, pattern: tuple[int, ...]) -> bool:
        return pattern in self.index

    def count_of(self, pattern: tuple[int, ...]) -> int:
        return self.counts[self.index[pattern]]

    def decode(self, i: int) -> str:
        if self.alphabet is None:
            raise ValueError("candidate set has no alphabet attached")
        return self.alphabet.decode(self.patterns[i])


def _concat_symbols(corpus: CharCorpus) -> np.ndarray:
    """All sentences joined with a separator that no window may cross."""
    parts: list[np.ndarray] = []
    sep = np.asarray([_SEP], dtype=np.int32)
    for s in corpus.sentences:
        parts.append(s.astype(np.int32))
        parts.append(sep)
    if not parts:
        return np.zeros(0, dtype=np.int32)
    return np.concatenate(parts)


def count_frequent_substrings(corpus: CharCorpus, f: int, L_max: int) -> CandidateSet:
    """All substrings of length <= L_max occurring more than ``f`` times.

    Counting sorts the fixed-width symbol windows of each length, which
    is equivalent to bucketing suffixes truncated at ``L_max``; overlaps
    are counted, and windows never span sentence boundaries.
    """
    if f < 1:
        raise ValueError(f"threshold f must be >= 1, got {f}")
    if L_max < 1:
        raise ValueError(f"L_max must be >= 1, got {L_max}")
    stream = _concat_symbols(corpus)
    patterns: list[tuple[int, ...]] = []
    counts: list[int] = []
    for ell in range(1, L_max + 1):
        if stream.size < ell:
            break
        windows = np.lib.stride_tricks.sliding_window_view(stream, ell)
        valid = windows[(windows != _SEP).all(axis=1)]
        if valid.shape[0] == 0:
            continue
        uniq, cnt = np.unique(valid, axis=0, return_counts=True)
        keep = cnt > f
        for row, c in zip(uniq[keep], cnt[keep]):
            patterns.append(tuple(int(x) for x in row))
            counts.append(int(c))
    return CandidateSet(patterns, counts, f, L_max, corpus.alphabet)


def _occurrence_positions(stream: np.ndarray, pattern: tuple[int, ...]) -> np.ndarray:
    """Start indices of all (overlapping) occurrences in the joined stream."""
    ell = len(pattern)
    if stream.size < ell:
        return np.zeros(0, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(stream, ell)
    hits = (windows == np.asarray(pattern, dtype=np.int32)).all(axis=1)
    return np.flatnonzero(hits)


def _positions_for(stream: np.ndarray, patterns) -> dict[tuple[int, ...], np.ndarray]:
    """Start positions for many patterns at once, one window sort per length."""
    by_len: dict[int, list[tuple[int, ...]]] = {}
    for p in patterns:
        by_len.setdefault(len(p), []).append(p)
    out: dict[tuple[int, ...], np.ndarray] = {}
    empty = np.zeros(0, dtype=np.int64)
    for ell, plist in by_len.items():
        if stream.size < ell:
            out.update({p: empty for p in plist})
            continue
        windows = np.lib.stride_tricks.sliding_window_view(stream, ell)
        valid_idx = np.flatnonzero((windows != _SEP).all(axis=1))
        if valid_idx.size == 0:
            out.update({p: empty for p in plist})
            continue
        vwin = windows[valid_idx]
        uniq, inverse = np.unique(vwin, axis=0, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        sorted_inv = inverse[order]
        bounds = np.searchsorted(sorted_inv, np.arange(len(uniq) + 1))
        uid_of = {uniq[i].tobytes(): i for i in range(len(uniq))}
        for p in plist:
            uid = uid_of.get(np.asarray(p, dtype=np.int32).tobytes())
            if uid is None:
                out[p] = empty
            else:
                pos = valid_idx[order[bounds[uid] : bounds[uid + 1]]]
                pos.sort()
                out[p] = pos
    return out


def _proper_subwords(pattern: tuple[int, ...]):
    n = len(pattern)
    for ell in range(1, n):
        for i in range(n - ell + 1):
            yield pattern[i : i + ell]


def reduce_candidates(cands: CandidateSet, corpus: CharCorpus) -> CandidateSet:
    """Drop candidates that only ever occur inside a longer candidate.

    A candidate alpha is removed when some candidate beta has alpha as a
    proper subword and every occurrence of alpha in the corpus lies
    inside an occurrence of beta.  Removal is decided against the input
    set, so the outcome is order-independent (containment of occurrence
    sets is transitive).
    """
    stream = _concat_symbols(corpus)
    # alpha -> [(beta_index, offsets of alpha within beta)]
    supers: dict[tuple[int, ...], list[tuple[int, list[int]]]] = {}
    for bi, beta in enumerate(cands.patterns):
        seen: dict[tuple[int, ...], list[int]] = {}
        for off in range(len(beta)):
            for end in range(off + 1, len(beta) + 1):
                sub = beta[off:end]
                if len(sub) < len(beta) and sub in cands.index:
                    seen.setdefault(sub, []).append(off)
        for sub, offs in seen.items():
            supers.setdefault(sub, []).append((bi, sorted(set(offs))))

    involved = set(supers)
    involved.update(cands.patterns[bi] for pairs in supers.values() for bi, _ in pairs)
    positions = _positions_for(stream, involved)

    removed = [False] * len(cands.patterns)
    for ai, alpha in enumerate(cands.patterns):
        for bi, offsets in supers.get(alpha, ()):
            p_alpha = positions[alpha]
            covered = np.zeros(p_alpha.shape, dtype=bool)
            beta_pos = positions[cands.patterns[bi]]
            for off in offsets:
                covered |= np.isin(p_alpha - off, beta_pos)
            if covered.all():
                removed[ai] = True
                break

    patterns = [p for p, r in zip(cands.patterns, removed) if not r]
    counts = [c for c, r in zip(cands.counts, removed) if not r]
    return CandidateSet(patterns, counts, cands.f, cands.L_max, cands.alphabet)


def mine_patterns(corpus: CharCorpus, f: int, L_max: int = 12) -> CandidateSet:
    """Frequent-substring counting followed by the reduction."""
    return reduce_candidates(count_frequent_substrings(corpus, f, L_max), corpus)


def save_candidates(path, cands: CandidateSet) -> None:
    """One pattern per line: escaped text, a tab, the occurrence count."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in enumerate(cands.counts):
            fh.write(f"{escape_pattern(cands.decode(i))}\t{c}\n")


def load_candidates(path, alphabet: Alphabet, f: int = 1, L_max: int = 12) -> CandidateSet:
    patterns: list[tuple[int, ...]] = []
    counts: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            text, count = line.split("\t")
            patterns.append(encode_pattern_text(unescape_pattern(text), alphabet))
            counts.append(int(count))
    return CandidateSet(patterns, counts, f, L_max, alphabet)


def escape_pattern(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def unescape_pattern(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def encode_pattern_text(text: str, alphabet: Alphabet) -> tuple[int, ...]:
    """Parse pattern text back to symbol ids, honoring reserved multi-char markers."""
    reserved = sorted(
        (s for s in alphabet.symbols if len(s) > 1), key=len, reverse=True
    )
    ids: list[int] = []
    i = 0
    while i < len(text):
        for marker in reserved:
            if text.startswith(marker, i):
                ids.append(alphabet.id_of(marker))
                i += len(marker)
                break
        else:
            ids.append(alphabet.id_of(text[i]))
            i += 1
    return tuple(ids)
