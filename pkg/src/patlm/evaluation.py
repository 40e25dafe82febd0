"""Perplexity, parameter counting, and the highway-gate diagnostic.

Evaluation runs the token stream as a single sequence with carried LSTM
state and dropout disabled, chunked over time purely for memory; the
result is therefore independent of the chunk size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import lm
from .encoding import EncodedCorpus

param_count = lm.param_count


def _stream_chunks(encoded: EncodedCorpus, chunk: int):
    ids, mask = encoded.padded_subwords()
    n = encoded.n_tokens
    targets = np.roll(encoded.word_ids, -1)
    for start in range(0, n - 1, chunk):
        stop = min(start + chunk, n - 1)
        yield (
            ids[start:stop][None, :, :],
            mask[start:stop][None, :, :],
            targets[start:stop][None, :].astype(np.int32),
        )


def perplexity(params: lm.LMParams, encoded: EncodedCorpus, chunk: int = 128) -> float:
    """exp of the mean per-token negative log-likelihood over the stream.

    The last corpus token has no successor and is not scored.
    """
    if encoded.vocab is not None and len(encoded.vocab) != params.config.vocab_size:
        raise ValueError(
            f"vocabulary mismatch: corpus has {len(encoded.vocab)} words, "
            f"model expects {params.config.vocab_size}"
        )
    if encoded.n_subword_types != params.config.n_subwords:
        raise ValueError(
            f"subword inventory mismatch: corpus has {encoded.n_subword_types}, "
            f"model expects {params.config.n_subwords}"
        )
    if encoded.n_tokens < 2:
        raise ValueError("need at least two tokens to evaluate")
    state = lm.init_state(params.config, 1, dtype=params.dtype)
    nll_total = 0.0
    n_scored = 0
    for sub_ids, sub_mask, targets in _stream_chunks(encoded, chunk):
        nll_sum, state, _ = lm.forward_window(params, sub_ids, sub_mask, targets, state)
        nll_total += nll_sum
        n_scored += targets.shape[1]
    return float(np.exp(nll_total / n_scored))


@dataclass
class GateStats:
    """Sampled transform-gate activations from both highway layers."""

    layer1: np.ndarray
    layer2: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.layer1.size + self.layer2.size)

    def summary(self) -> dict:
        out = {}
        for name, vals in (("layer1", self.layer1), ("layer2", self.layer2)):
            deciles = np.percentile(vals, np.arange(10, 100, 10)) if vals.size else []
            out[name] = {
                "mean": float(vals.mean()) if vals.size else float("nan"),
                "n": int(vals.size),
                "deciles": [float(d) for d in deciles],
            }
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "value"])
            for layer, vals in ((1, self.layer1), (2, self.layer2)):
                for v in vals:
                    w.writerow([layer, repr(float(v))])


def gate_stats(
    params: lm.LMParams, encoded: EncodedCorpus, max_samples: int = 200_000,
    chunk: int = 128,
) -> GateStats:
    """Collect transform-gate values from evaluation-mode forward passes."""
    state = lm.init_state(params.config, 1, dtype=params.dtype)
    l1: list[np.ndarray] = []
    l2: list[np.ndarray] = []
    collected = 0
    for sub_ids, sub_mask, targets in _stream_chunks(encoded, chunk):
        _, state, cache = lm.forward_window(
            params, sub_ids, sub_mask, targets, state, collect_gates=True
        )
        g1, g2 = cache["gates"]
        l1.append(g1.reshape(-1).astype(np.float64))
        l2.append(g2.reshape(-1).astype(np.float64))
        collected += l1[-1].size + l2[-1].size
        if collected >= max_samples:
            break
    lay1 = np.concatenate(l1) if l1 else np.zeros(0)
    lay2 = np.concatenate(l2) if l2 else np.zeros(0)
    half = max_samples // 2
    return GateStats(lay1[:half], lay2[:half])
