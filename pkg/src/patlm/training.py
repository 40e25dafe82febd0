"""Truncated-BPTT training loop: SGD with validation-driven rate halving.

The word stream is cut into ``batch`` contiguous streams; windows of
``bptt_steps`` tokens are fed with the LSTM state carried across
consecutive windows inside an epoch and reset at epoch boundaries.
Each token's target is the next token of the original stream (the final
corpus token wraps to the first, which keeps every window full).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import lm
from .encoding import EncodedCorpus
from .evaluation import perplexity


@dataclass
class TrainConfig:
    bptt_steps: int = 35
    batch: int = 20
    lr0: float = 0.7
    epochs: int = 65
    init_range: float = 0.05
    forget_bias: float = 1.0
    highway_transform_bias: float = -2.0
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.bptt_steps, self.batch, self.epochs) < 1:
            raise ValueError("bptt_steps, batch and epochs must be positive")
        if self.lr0 <= 0 or self.init_range <= 0 or self.grad_clip <= 0:
            raise ValueError("lr0, init_range and grad_clip must be positive")


def init_params(
    cfg: TrainConfig, lm_cfg: lm.LMConfig, rng=None, dtype=np.float32
) -> lm.LMParams:
    """Uniform init in [-r, r]; forget bias and highway transform bias overridden."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
    r = cfg.init_range
    tensors: dict[str, np.ndarray] = {}
    for name, shape in lm.param_shapes(lm_cfg).items():
        tensors[name] = rng.uniform(-r, r, size=shape).astype(dtype)
    fslice = lm.forget_bias_slice(lm_cfg.d_lm)
    for name in ("lstm1_b", "lstm2_b"):
        tensors[name][fslice] = cfg.forget_bias
    for name in ("hw1_bt", "hw2_bt"):
        tensors[name][:] = cfg.highway_transform_bias
    return lm.LMParams(lm_cfg, tensors)


@dataclass
class Batcher:
    """Windows of (subword ids, subword mask, targets) over stream chunks."""

    sub_ids: np.ndarray     # int32 (batch, n_steps, L)
    sub_mask: np.ndarray    # float32 (batch, n_steps, L)
    targets: np.ndarray     # int32 (batch, n_steps)
    bptt_steps: int

    @property
    def n_windows(self) -> int:
        return self.sub_ids.shape[1] // self.bptt_steps

    @property
    def tokens_per_epoch(self) -> int:
        return self.sub_ids.shape[0] * self.n_windows * self.bptt_steps

    def windows(self):
        s = self.bptt_steps
        for w in range(self.n_windows):
            sl = slice(w * s, (w + 1) * s)
            yield self.sub_ids[:, sl], self.sub_mask[:, sl], self.targets[:, sl]


def make_batches(encoded: EncodedCorpus, batch: int, bptt_steps: int) -> Batcher:
    """Split the token stream into contiguous per-batch streams of windows."""
    n = encoded.n_tokens
    if n < batch:
        raise ValueError(f"corpus has {n} tokens, fewer than the batch size {batch}")
    per_stream = n // batch
    if per_stream < 1:
        raise ValueError("corpus too small for the requested batch size")
    ids, mask = encoded.padded_subwords()
    used = batch * per_stream
    word_ids = encoded.word_ids
    targets_flat = np.roll(word_ids, -1)[:used]
    sub_ids = ids[:used].reshape(batch, per_stream, -1)
    sub_mask = mask[:used].reshape(batch, per_stream, -1)
    targets = targets_flat.reshape(batch, per_stream).astype(np.int32)
    return Batcher(sub_ids, sub_mask, targets, bptt_steps)


@dataclass
class TrainResult:
    best_params: lm.LMParams
    best_valid_ppl: float
    best_epoch: int
    metrics: list[dict] = field(default_factory=list)
    diverged: bool = False

    def write_metrics(self, path) -> None:
        """CSV: epoch, lr, train_ppl, valid_ppl, wall_seconds, grad_clip_events."""
        fields = ["epoch", "lr", "train_ppl", "valid_ppl", "wall_seconds", "grad_clip_events"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in self.metrics:
                w.writerow({k: row[k] for k in fields})


def clip_gradients(grads: dict, max_norm: float) -> tuple[float, bool]:
    """Scale the global gradient norm down to ``max_norm``; returns (norm, fired)."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return norm, True
    return norm, False


def train(
    params: lm.LMParams,
    train_corpus: EncodedCorpus,
    valid_corpus: EncodedCorpus,
    cfg: TrainConfig,
    verbose: bool = False,
) -> TrainResult:
    """SGD with per-window dropout masks and gradient-norm clipping.

    The learning rate halves whenever an epoch fails to strictly improve
    the best validation perplexity seen so far; the returned checkpoint
    is the one with the lowest validation perplexity.  A non-finite loss
    aborts training and returns the last finite checkpoint, flagged.
    """
    rng = np.random.default_rng(cfg.seed)
    batcher = make_batches(train_corpus, cfg.batch, cfg.bptt_steps)
    lm_cfg = params.config
    shapes, rates = lm.window_mask_spec(lm_cfg, cfg.batch)

    lr = cfg.lr0
    best_ppl = np.inf
    best_params = params.copy()
    best_epoch = 0
    metrics: list[dict] = []
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        state = lm.init_state(lm_cfg, cfg.batch, dtype=params.dtype)
        nll_total = 0.0
        clip_events = 0
        for sub_ids, sub_mask, targets in batcher.windows():
            masks = lm.variational_dropout_masks(shapes, rates, rng)
            nll_sum, state, cache = lm.forward_window(
                params, sub_ids, sub_mask, targets, state, masks=masks
            )
            if not np.isfinite(nll_sum):
                diverged = True
                break
            nll_total += nll_sum
            grads = lm.backward_window(params, cache, grad_scale=1.0 / cfg.batch)
            _, fired = clip_gradients(grads, cfg.grad_clip)
            clip_events += int(fired)
            for name, g in grads.items():
                params.tensors[name] -= lr * g
        if diverged:
            break

        train_ppl = float(np.exp(nll_total / batcher.tokens_per_epoch))
        valid_ppl = perplexity(params, valid_corpus)
        wall = time.monotonic() - t0
        metrics.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_ppl": train_ppl,
                "valid_ppl": valid_ppl,
                "wall_seconds": wall,
                "grad_clip_events": clip_events,
            }
        )
        if verbose:
            print(
                f"epoch {epoch:3d}  lr {lr:.4f}  train_ppl {train_ppl:9.3f}  "
                f"valid_ppl {valid_ppl:9.3f}  ({wall:.1f}s)"
            )
        if valid_ppl < best_ppl:
            best_ppl = valid_ppl
            best_params = params.copy()
            best_epoch = epoch
        else:
            lr /= 2.0

    return TrainResult(best_params, float(best_ppl), best_epoch, metrics, diverged)
