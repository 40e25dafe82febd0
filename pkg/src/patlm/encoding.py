"""Word streams paired with per-token subword-id sequences.

An :class:`EncodedCorpus` is the language-model-facing view of a corpus:
a flat stream of word ids plus, for every token, the sequence of subword
ids that spells it.  Subwords are either alphabet symbols (characters)
or automaton states.  When a profile appends an end-of-sentence token,
that token gets a dedicated subword id one past the base inventory, so
the base alphabet/state set is left untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import CharCorpus, EOS_WORD, WordVocab


@dataclass
class EncodedCorpus:
    """Flat word-token stream with per-token subword sequences."""

    word_ids: np.ndarray            # int32 [n_tokens]
    subwords: list[np.ndarray]      # per token, int32 subword ids
    n_subword_types: int            # size of the subword embedding inventory
    eos_subword_id: int | None      # id of the eos subword, if the stream has one
    kind: str                       # "char" or "pattern"
    vocab: WordVocab

    @property
    def n_tokens(self) -> int:
        return int(self.word_ids.shape[0])

    def subword_lengths(self) -> np.ndarray:
        return np.asarray([len(s) for s in self.subwords], dtype=np.int64)

    def padded_subwords(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (ids, mask) views padded to the longest token in the stream."""
        lens = self.subword_lengths()
        width = int(lens.max()) if lens.size else 0
        ids = np.zeros((self.n_tokens, width), dtype=np.int32)
        mask = np.zeros((self.n_tokens, width), dtype=np.float32)
        for i, s in enumerate(self.subwords):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1.0
        return ids, mask


def encode_chars(corpus: CharCorpus, vocab: WordVocab) -> EncodedCorpus:
    """Character-level encoding: each word's subwords are its symbol ids."""
    word_ids: list[int] = []
    subwords: list[np.ndarray] = []
    n_base = len(corpus.alphabet)
    eos_id = n_base if corpus.append_eos else None
    eos_seq = np.asarray([n_base], dtype=np.int32)
    for i in range(corpus.n_sentences):
        sent = corpus.sentences[i]
        for (a, b), w in zip(corpus.word_spans[i], corpus.words_of(i)):
            word_ids.append(vocab.id_of(w))
            subwords.append(sent[a:b].astype(np.int32))
        if corpus.append_eos:
            word_ids.append(vocab.id_of(EOS_WORD))
            subwords.append(eos_seq)
    n_types = n_base + (1 if eos_id is not None else 0)
    return EncodedCorpus(
        np.asarray(word_ids, dtype=np.int32), subwords, n_types, eos_id, "char", vocab
    )


def save_encoded(path, enc: EncodedCorpus) -> None:
    """Serialize to an npz blob (flat subword array + offsets + JSON meta)."""
    lens = enc.subword_lengths()
    offsets = np.zeros(enc.n_tokens + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    flat = (
        np.concatenate(enc.subwords) if enc.subwords else np.zeros(0, dtype=np.int32)
    )
    meta = {
        "kind": enc.kind,
        "n_subword_types": enc.n_subword_types,
        "eos_subword_id": enc.eos_subword_id,
        "vocab": enc.vocab.words,
    }
    np.savez_compressed(
        path,
        word_ids=enc.word_ids,
        sub_flat=flat.astype(np.int32),
        sub_offsets=offsets,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
    )


def load_encoded(path) -> EncodedCorpus:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        word_ids = z["word_ids"]
        flat = z["sub_flat"]
        offsets = z["sub_offsets"]
    subwords = [flat[offsets[i] : offsets[i + 1]] for i in range(len(word_ids))]
    return EncodedCorpus(
        word_ids,
        subwords,
        int(meta["n_subword_types"]),
        meta["eos_subword_id"],
        meta["kind"],
        WordVocab(meta["vocab"]),
    )
