"""Deterministic synthetic morphology corpus for desk-scale experiments.

The vocabulary is 30 roots x 6 suffixes plus 20 function words.  Roots
come in anagram triples (three permutations of one letter multiset), so
order-insensitive word representations collide while order-sensitive
ones do not.  Sentences alternate content and function words; the
function word is a noisy deterministic function of the preceding
(root, suffix) pair, and the suffix of the next content word depends on
that function word.  Root frequencies are Zipf-distributed, which
leaves a long tail of rare words whose behavior is predictable only
through their subword structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_ANAGRAM_GROUPS = [
    ("bad", "dab", "abd"),
    ("gol", "log", "lgo"),
    ("mur", "rum", "urm"),
    ("pes", "spe", "eps"),
    ("kit", "tik", "itk"),
    ("vone", "nove", "envo"),
    ("dalu", "ladu", "udal"),
    ("rimo", "miro", "orim"),
    ("stape", "spate", "tapes"),
    ("blino", "nilbo", "obnil"),
]

_SUFFIXES = ("an", "esi", "ur", "il", "oma", "ek")

_FUNCTION_WORDS = (
    "zu", "ke", "po", "ha", "wi", "fo", "ny", "ce", "ju", "xa",
    "qi", "ve", "ro", "mu", "ta", "li", "ga", "de", "so", "be",
)

_NOISE = 0.1  # chance the function word is drawn uniformly instead


@dataclass
class SynthSpec:
    seed: int = 1
    n_tokens: int = 50_000
    zipf_exponent: float = 1.0
    min_pairs: int = 4
    max_pairs: int = 9


def vocabulary() -> tuple[list[str], list[str], list[str]]:
    """(roots, suffixes, function words); 30 + 6 + 20 entries."""
    roots = [r for group in _ANAGRAM_GROUPS for r in group]
    assert len(set(roots)) == 30
    return roots, list(_SUFFIXES), list(_FUNCTION_WORDS)


def _function_word_id(root_id: int, suffix_id: int) -> int:
    return (7 * root_id + 13 * suffix_id) % len(_FUNCTION_WORDS)


def _suffix_probs() -> np.ndarray:
    """Per function word, the distribution of the next content suffix."""
    n_f, n_s = len(_FUNCTION_WORDS), len(_SUFFIXES)
    probs = np.full((n_f, n_s), 0.2 / (n_s - 2))
    for f in range(n_f):
        probs[f, f % n_s] = 0.55
        probs[f, (f + 3) % n_s] = 0.25
    return probs / probs.sum(axis=1, keepdims=True)


def generate_sentences(spec: SynthSpec) -> list[str]:
    rng = np.random.default_rng(spec.seed)
    roots, suffixes, fwords = vocabulary()
    n_r, n_s = len(roots), len(suffixes)
    root_p = 1.0 / np.arange(1, n_r + 1) ** spec.zipf_exponent
    root_p /= root_p.sum()
    sfx_probs = _suffix_probs()

    sentences: list[str] = []
    total = 0
    while total < spec.n_tokens:
        n_pairs = int(rng.integers(spec.min_pairs, spec.max_pairs + 1))
        words: list[str] = []
        sfx = int(rng.integers(n_s))
        for _ in range(n_pairs):
            root = int(rng.choice(n_r, p=root_p))
            words.append(roots[root] + suffixes[sfx])
            if rng.random() < _NOISE:
                f = int(rng.integers(len(fwords)))
            else:
                f = _function_word_id(root, sfx)
            words.append(fwords[f])
            sfx = int(rng.choice(n_s, p=sfx_probs[f]))
        sentences.append(" ".join(words))
        total += len(words)
    return sentences


def split_sentences(sentences: list[str]) -> dict[str, list[str]]:
    """8:1:1 train/valid/test split, interleaved by sentence index."""
    splits: dict[str, list[str]] = {"train": [], "valid": [], "test": []}
    for i, s in enumerate(sentences):
        if i % 10 == 8:
            splits["valid"].append(s)
        elif i % 10 == 9:
            splits["test"].append(s)
        else:
            splits["train"].append(s)
    return splits


def write_splits(paths: dict[str, Path], spec: SynthSpec | None = None) -> dict[str, Path]:
    """Generate and write the three splits to the given file paths."""
    spec = spec or SynthSpec()
    splits = split_sentences(generate_sentences(spec))
    out: dict[str, Path] = {}
    for name, lines in splits.items():
        p = Path(paths[name])
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out[name] = p
    return out


def write_corpus(out_dir, spec: SynthSpec | None = None) -> dict[str, Path]:
    """Write train/valid/test splits under a directory with default names."""
    out = Path(out_dir)
    return write_splits({n: out / f"{n}.txt" for n in ("train", "valid", "test")}, spec)
