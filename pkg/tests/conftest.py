import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from patlm.corpus import Alphabet, CharCorpus


def corpus_from_lines(lines, profile="raw", alphabet=None):
    """Build a CharCorpus from in-memory lines, without touching disk."""
    from patlm.corpus import normalize_line

    alphabet = alphabet or Alphabet()
    sentences, word_spans = [], []
    for line in lines:
        tokens = normalize_line(line, profile).split(" ")
        if tokens == [""]:
            continue
        ids, spans = [], []
        for k, tok in enumerate(tokens):
            if k:
                ids.append(alphabet.intern(" "))
            start = len(ids)
            if profile == "ptb" and tok == "<unk>":
                ids.append(alphabet.intern("<unk>"))
            else:
                ids.extend(alphabet.intern(c) for c in tok)
            spans.append((start, len(ids)))
        sentences.append(np.asarray(ids, dtype=np.int32))
        word_spans.append(spans)
    return CharCorpus(sentences, word_spans, profile, alphabet)


@pytest.fixture
def tiny_rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_corpus(tmp_path):
    def _make(lines, profile="raw", name="corpus.txt", alphabet=None):
        from patlm.corpus import load_corpus

        p = tmp_path / name
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return load_corpus(p, profile, alphabet=alphabet)

    return _make
