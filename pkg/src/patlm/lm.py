"""Subword-aware neural language model with hand-written backpropagation.

Architecture: subword embeddings -> composition (concat / sum / cnn)
-> optional linear projection -> two highway layers -> two LSTM layers
-> softmax over the word vocabulary.  Everything is plain numpy; the
backward pass is explicit so gradients can be verified against finite
differences in double precision.

Composition methods produce the vector fed to the highway stack:

* concat: subword vectors truncated/zero-padded to a fixed count ``n``
  and concatenated, then projected to the highway width;
* sum: componentwise sum (subword width equals highway width);
* cnn: per-width filter banks, tanh, max-over-time, concatenated
  (highway width equals the total filter count).

Variational dropout uses one mask per (stream, site) sampled once per
window and reused across all time steps; kept units are scaled by
1/(1-rate) so the masks are identity in expectation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

COMPOSITIONS = ("concat", "sum", "cnn")

# Gate order inside the fused LSTM weight matrices.
_I, _F, _G, _O = 0, 1, 2, 3


def forget_bias_slice(d_lm: int) -> slice:
    """Slice of the fused LSTM bias vector holding the forget gate."""
    return slice(_F * d_lm, (_F + 1) * d_lm)


@dataclass(frozen=True)
class DropoutRates:
    embedding: float = 0.0
    gate_input: float = 0.0
    hidden: float = 0.0
    output: float = 0.0

    def __post_init__(self):
        for r in (self.embedding, self.gate_input, self.hidden, self.output):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {r}")


def dropout_rates(size_class: str, composition: str) -> DropoutRates:
    """Site rates by model size: small / medium concat+sum / medium cnn."""
    if size_class == "small":
        col = 0
    elif size_class == "medium":
        col = 2 if composition == "cnn" else 1
    else:
        raise ValueError(f"unknown size class {size_class!r}")
    table = {
        "embedding": (0.1, 0.15, 0.2),
        "gate_input": (0.2, 0.3, 0.35),
        "hidden": (0.1, 0.15, 0.2),
        "output": (0.2, 0.3, 0.35),
    }
    return DropoutRates(**{k: v[col] for k, v in table.items()})


@dataclass(frozen=True)
class LMConfig:
    composition: str
    n_subwords: int           # subword inventory size |X|
    vocab_size: int
    d_x: int                  # subword embedding width
    d_hw: int                 # highway width
    d_lm: int                 # LSTM hidden width
    n_concat: int = 0         # concat pad/truncate length
    cnn_widths: tuple[int, ...] = ()
    cnn_depths: tuple[int, ...] = ()
    dropout: DropoutRates = field(default_factory=DropoutRates)
    size_class: str = "custom"

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ValueError(f"unknown composition {self.composition!r}")
        if min(self.n_subwords, self.vocab_size, self.d_x, self.d_hw, self.d_lm) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.composition == "sum" and self.d_x != self.d_hw:
            raise ValueError("sum composition requires d_x == d_hw")
        if self.composition == "concat" and self.n_concat < 1:
            raise ValueError("concat composition requires a pad length n >= 1")
        if self.composition == "cnn":
            if len(self.cnn_widths) != len(self.cnn_depths) or not self.cnn_widths:
                raise ValueError("cnn needs matching width and depth lists")
            if sum(self.cnn_depths) != self.d_hw:
                raise ValueError("cnn requires d_hw == sum of filter depths")

    @property
    def needs_projection(self) -> bool:
        return self.composition == "concat"


def section4_config(
    composition: str,
    size_class: str,
    subword_kind: str,
    n_subwords: int,
    vocab_size: int,
    n_concat: int = 0,
) -> LMConfig:
    """Standard hyperparameter bundles for the small/medium model classes."""
    if size_class not in ("small", "medium"):
        raise ValueError(f"unknown size class {size_class!r}")
    if subword_kind not in ("char", "pattern"):
        raise ValueError(f"unknown subword kind {subword_kind!r}")
    d_lm = 300 if size_class == "small" else 650
    drop = dropout_rates(size_class, composition)
    if composition == "concat":
        d_x = 15 if subword_kind == "char" else 30
        return LMConfig(
            "concat", n_subwords, vocab_size, d_x, d_lm, d_lm,
            n_concat=n_concat, dropout=drop, size_class=size_class,
        )
    if composition == "sum":
        return LMConfig(
            "sum", n_subwords, vocab_size, d_lm, d_lm, d_lm,
            dropout=drop, size_class=size_class,
        )
    if subword_kind == "pattern":
        d_x = 50 if size_class == "small" else 100
        depths = (
            (100, 50, 75, 100, 100, 100)
            if size_class == "small"
            else (100, 100, 150, 200, 200, 200, 200)
        )
    else:
        d_x = 15
        depths = (
            (25, 50, 75, 100, 125, 150)
            if size_class == "small"
            else (50, 100, 150, 200, 200, 200, 200)
        )
    widths = tuple(range(1, len(depths) + 1))
    return LMConfig(
        "cnn", n_subwords, vocab_size, d_x, sum(depths), d_lm,
        cnn_widths=widths, cnn_depths=depths, dropout=drop, size_class=size_class,
    )


def param_shapes(cfg: LMConfig) -> dict[str, tuple[int, ...]]:
    """Named tensor shapes, in a stable order."""
    shapes: dict[str, tuple[int, ...]] = {"emb": (cfg.n_subwords, cfg.d_x)}
    if cfg.composition == "concat":
        shapes["proj_w"] = (cfg.n_concat * cfg.d_x, cfg.d_hw)
        shapes["proj_b"] = (cfg.d_hw,)
    elif cfg.composition == "cnn":
        for w, depth in zip(cfg.cnn_widths, cfg.cnn_depths):
            shapes[f"cnn_w{w}"] = (w, cfg.d_x, depth)
            shapes[f"cnn_b{w}"] = (depth,)
    for i in (1, 2):
        shapes[f"hw{i}_wt"] = (cfg.d_hw, cfg.d_hw)
        shapes[f"hw{i}_bt"] = (cfg.d_hw,)
        shapes[f"hw{i}_wh"] = (cfg.d_hw, cfg.d_hw)
        shapes[f"hw{i}_bh"] = (cfg.d_hw,)
    shapes["lstm1_wx"] = (cfg.d_hw, 4 * cfg.d_lm)
    shapes["lstm1_wh"] = (cfg.d_lm, 4 * cfg.d_lm)
    shapes["lstm1_b"] = (4 * cfg.d_lm,)
    shapes["lstm2_wx"] = (cfg.d_lm, 4 * cfg.d_lm)
    shapes["lstm2_wh"] = (cfg.d_lm, 4 * cfg.d_lm)
    shapes["lstm2_b"] = (4 * cfg.d_lm,)
    shapes["out_w"] = (cfg.d_lm, cfg.vocab_size)
    shapes["out_b"] = (cfg.vocab_size,)
    return shapes


@dataclass
class LMParams:
    """All trainable tensors, keyed by name."""

    config: LMConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ValueError(f"missing tensor {name!r}")
            if tuple(self.tensors[name].shape) != shape:
                raise ValueError(
                    f"tensor {name!r} has shape {self.tensors[name].shape}, "
                    f"expected {shape}"
                )

    @property
    def dtype(self):
        return self.tensors["emb"].dtype

    def copy(self) -> "LMParams":
        return LMParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "LMParams":
        return LMParams(
            self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def n_params(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def param_count(params: LMParams) -> dict[str, int]:
    """Total trainable scalar count, broken down by component."""
    groups = {"embedding": 0, "composition": 0, "highway": 0, "lstm": 0, "softmax": 0}
    for name, t in params.tensors.items():
        if name == "emb":
            groups["embedding"] += t.size
        elif name.startswith(("proj_", "cnn_")):
            groups["composition"] += t.size
        elif name.startswith("hw"):
            groups["highway"] += t.size
        elif name.startswith("lstm"):
            groups["lstm"] += t.size
        else:
            groups["softmax"] += t.size
    groups["total"] = sum(groups.values())
    return groups


def save_checkpoint(path, params: LMParams) -> None:
    """Versioned npz blob: named tensors plus the config as JSON."""
    cfg = params.config
    meta = {
        "format": "patlm-checkpoint-v1",
        "config": {
            "composition": cfg.composition,
            "n_subwords": cfg.n_subwords,
            "vocab_size": cfg.vocab_size,
            "d_x": cfg.d_x,
            "d_hw": cfg.d_hw,
            "d_lm": cfg.d_lm,
            "n_concat": cfg.n_concat,
            "cnn_widths": list(cfg.cnn_widths),
            "cnn_depths": list(cfg.cnn_depths),
            "dropout": [
                cfg.dropout.embedding,
                cfg.dropout.gate_input,
                cfg.dropout.hidden,
                cfg.dropout.output,
            ],
            "size_class": cfg.size_class,
        },
    }
    np.savez_compressed(
        path,
        __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        **params.tensors,
    )


def load_checkpoint(path) -> LMParams:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format") != "patlm-checkpoint-v1":
            raise ValueError("not a recognized checkpoint file")
        c = meta["config"]
        cfg = LMConfig(
            c["composition"], c["n_subwords"], c["vocab_size"], c["d_x"],
            c["d_hw"], c["d_lm"], n_concat=c["n_concat"],
            cnn_widths=tuple(c["cnn_widths"]), cnn_depths=tuple(c["cnn_depths"]),
            dropout=DropoutRates(*c["dropout"]), size_class=c["size_class"],
        )
        tensors = {k: z[k] for k in z.files if k != "__meta__"}
    return LMParams(cfg, tensors)


# ---------------------------------------------------------------------------
# Variational dropout
# ---------------------------------------------------------------------------

def variational_dropout_masks(shape_spec: dict, rates: dict, rng) -> dict:
    """One inverted-dropout mask per named site, fixed for a whole window."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    masks: dict[str, np.ndarray] = {}
    for name, shape in shape_spec.items():
        rate = float(rates.get(name, 0.0))
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if rate == 0.0:
            masks[name] = np.ones(shape, dtype=np.float64)
        else:
            keep = (rng.random(shape) >= rate).astype(np.float64)
            masks[name] = keep / (1.0 - rate)
    return masks


def window_mask_spec(cfg: LMConfig, batch: int) -> tuple[dict, dict]:
    """Shape spec and per-site rates for one training window."""
    shapes = {
        "emb": (batch, cfg.d_x),
        "input1": (batch, cfg.d_hw),
        "hidden1": (batch, cfg.d_lm),
        "input2": (batch, cfg.d_lm),
        "hidden2": (batch, cfg.d_lm),
        "output": (batch, cfg.d_lm),
    }
    r = cfg.dropout
    rates = {
        "emb": r.embedding,
        "input1": r.gate_input,
        "hidden1": r.hidden,
        "input2": r.gate_input,
        "hidden2": r.hidden,
        "output": r.output,
    }
    return shapes, rates


def _identity_masks(cfg: LMConfig, batch: int, dtype) -> dict:
    shapes, _ = window_mask_spec(cfg, batch)
    return {k: np.ones(s, dtype=dtype) for k, s in shapes.items()}


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def _compose_batch(params: LMParams, vecs: np.ndarray, mask: np.ndarray):
    """vecs (N, L, d_x) with mask (N, L) -> composed (N, width), cache."""
    cfg = params.config
    if cfg.composition == "sum":
        return vecs.sum(axis=1), {"mask": mask}
    if cfg.composition == "concat":
        N, L, d = vecs.shape
        n = cfg.n_concat
        if L >= n:
            padded = vecs[:, :n, :]
        else:
            padded = np.concatenate(
                [vecs, np.zeros((N, n - L, d), dtype=vecs.dtype)], axis=1
            )
        return padded.reshape(N, n * d), {"L": L}
    # cnn
    wmax = max(cfg.cnn_widths)
    N, L, d = vecs.shape
    if L < wmax:
        vecs = np.concatenate(
            [vecs, np.zeros((N, wmax - L, d), dtype=vecs.dtype)], axis=1
        )
    outs = []
    cache = {"padded_L": vecs.shape[1], "orig_L": L, "banks": []}
    for w in cfg.cnn_widths:
        W = params.tensors[f"cnn_w{w}"]
        b = params.tensors[f"cnn_b{w}"]
        windows = np.lib.stride_tricks.sliding_window_view(vecs, w, axis=1)
        # windows: (N, P, d, w)
        act = np.tanh(np.einsum("npdw,wdk->npk", windows, W) + b)
        arg = act.argmax(axis=1)
        outs.append(np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0, :])
        cache["banks"].append({"w": w, "act": act, "arg": arg, "windows": windows})
    return np.concatenate(outs, axis=1), cache


def _compose_backward(params: LMParams, dw: np.ndarray, vecs_shape, cache, grads):
    """Gradient of the composed vector w.r.t. the masked subword vectors."""
    cfg = params.config
    N, L, d = vecs_shape
    if cfg.composition == "sum":
        return np.broadcast_to(dw[:, None, :], vecs_shape)
    if cfg.composition == "concat":
        n = cfg.n_concat
        dpad = dw.reshape(N, n, d)
        dvecs = np.zeros(vecs_shape, dtype=dw.dtype)
        keep = min(L, n)
        dvecs[:, :keep, :] = dpad[:, :keep, :]
        return dvecs
    # cnn
    dvecs_p = np.zeros((N, cache["padded_L"], d), dtype=dw.dtype)
    col = 0
    for bank in cache["banks"]:
        w, act, arg = bank["w"], bank["act"], bank["arg"]
        windows = bank["windows"]
        K = act.shape[2]
        dm = dw[:, col : col + K]
        col += K
        dact = np.zeros_like(act)
        np.put_along_axis(dact, arg[:, None, :], dm[:, None, :], axis=1)
        dpre = dact * (1.0 - act * act)
        grads[f"cnn_w{w}"] += np.einsum("npdw,npk->wdk", windows, dpre)
        grads[f"cnn_b{w}"] += dpre.sum(axis=(0, 1))
        dwin = np.einsum("npk,wdk->npdw", dpre, params.tensors[f"cnn_w{w}"])
        P = act.shape[1]
        for r in range(w):
            dvecs_p[:, r : r + P, :] += dwin[:, :, :, r]
    return dvecs_p[:, :L, :]


def compose(method: str, subword_vectors, n: int = 0, params: LMParams | None = None):
    """Single-word composition, mirroring the batched training path.

    ``sum`` and ``concat`` need no parameters (concat returns the raw
    length-``n * d_x`` vector, before any projection); ``cnn`` reads its
    filter banks from ``params``.
    """
    vecs = np.asarray(subword_vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] == 0:
        raise ValueError("subword_vectors must be a nonempty (length, d_x) array")
    if method == "sum":
        return vecs.sum(axis=0)
    if method == "concat":
        if n < 1:
            raise ValueError("concat needs a pad length n >= 1")
        L, d = vecs.shape
        out = np.zeros(n * d, dtype=vecs.dtype)
        keep = min(L, n)
        out[: keep * d] = vecs[:keep].reshape(-1)
        return out
    if method == "cnn":
        if params is None:
            raise ValueError("cnn composition needs model parameters")
        mask = np.ones(vecs.shape[:1], dtype=vecs.dtype)
        out, _ = _compose_batch(params, vecs[None, :, :], mask[None, :])
        return out[0]
    raise ValueError(f"unknown composition {method!r}")


# ---------------------------------------------------------------------------
# Highway
# ---------------------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _highway_batch(x, wt, bt, wh, bh):
    t = _sigmoid(x @ wt + bt)
    z = np.tanh(x @ wh + bh)
    y = t * z + (1.0 - t) * x
    return y, {"x": x, "t": t, "z": z}


def _highway_backward(dy, cache, wt, wh, grads, prefix):
    x, t, z = cache["x"], cache["t"], cache["z"]
    dt = dy * (z - x)
    dz = dy * t
    dx = dy * (1.0 - t)
    dpre_t = dt * t * (1.0 - t)
    dpre_z = dz * (1.0 - z * z)
    grads[f"{prefix}_wt"] += x.T @ dpre_t
    grads[f"{prefix}_bt"] += dpre_t.sum(axis=0)
    grads[f"{prefix}_wh"] += x.T @ dpre_z
    grads[f"{prefix}_bh"] += dpre_z.sum(axis=0)
    dx += dpre_t @ wt.T + dpre_z @ wh.T
    return dx


def highway_forward(x, layer_params: dict):
    """One highway layer on a single vector; returns (output, transform gate)."""
    xb = np.asarray(x, dtype=np.float64)[None, :]
    y, cache = _highway_batch(
        xb, layer_params["wt"], layer_params["bt"],
        layer_params["wh"], layer_params["bh"],
    )
    return y[0], cache["t"][0]


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def _lstm_step(x, h, c, wx, wh, b, d_lm):
    gates = x @ wx + h @ wh + b
    i = _sigmoid(gates[:, :d_lm])
    f = _sigmoid(gates[:, d_lm : 2 * d_lm])
    g = np.tanh(gates[:, 2 * d_lm : 3 * d_lm])
    o = _sigmoid(gates[:, 3 * d_lm :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = {"x": x, "h": h, "c": c, "i": i, "f": f, "g": g, "o": o, "tc": tc}
    return h_new, c_new, cache


def _lstm_step_backward(dh, dc, cache, wx, wh, grads, prefix):
    i, f, g, o, tc = cache["i"], cache["f"], cache["g"], cache["o"], cache["tc"]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * cache["c"]
    dc_prev = dc * f
    dgates = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    grads[f"{prefix}_wx"] += cache["x"].T @ dgates
    grads[f"{prefix}_wh"] += cache["h"].T @ dgates
    grads[f"{prefix}_b"] += dgates.sum(axis=0)
    dx = dgates @ wx.T
    dh_prev = dgates @ wh.T
    return dx, dh_prev, dc_prev


def init_state(cfg: LMConfig, batch: int, dtype=np.float32):
    """Zero initial (h, c) for both LSTM layers."""
    z = lambda: np.zeros((batch, cfg.d_lm), dtype=dtype)
    return (z(), z(), z(), z())


def lstm_stack_step(params: LMParams, w_t, state):
    """One word step through both LSTM layers (no dropout)."""
    cfg = params.config
    x = np.asarray(w_t, dtype=params.dtype)[None, :]
    h1, c1, h2, c2 = state
    t = params.tensors
    h1n, c1n, _ = _lstm_step(x, h1, c1, t["lstm1_wx"], t["lstm1_wh"], t["lstm1_b"], cfg.d_lm)
    h2n, c2n, _ = _lstm_step(h1n, h2, c2, t["lstm2_wx"], t["lstm2_wh"], t["lstm2_b"], cfg.d_lm)
    return h2n[0], (h1n, c1n, h2n, c2n)


# ---------------------------------------------------------------------------
# Softmax
# ---------------------------------------------------------------------------

def _softmax_nll_batch(h, targets, W, b):
    """Returns (per-token nll in float64, probs) for h (N, d), targets (N,)."""
    logits = h @ W + b
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    sums = ex.sum(axis=1, keepdims=True)
    probs = ex / sums
    lse = (m[:, 0] + np.log(sums[:, 0])).astype(np.float64)
    picked = logits[np.arange(len(targets)), targets].astype(np.float64)
    return lse - picked, probs


def softmax_nll(h, target: int, W, b):
    """Loss and gradients for a single prediction; target is a word id."""
    if not 0 <= target < W.shape[1]:
        raise IndexError(f"target {target} out of range for vocab {W.shape[1]}")
    hb = np.asarray(h, dtype=np.float64)[None, :]
    nll, probs = _softmax_nll_batch(hb, np.asarray([target]), W, b)
    dlogits = probs.copy()
    dlogits[0, target] -= 1.0
    grads = {"h": (dlogits @ W.T)[0], "W": hb.T @ dlogits, "b": dlogits[0]}
    return float(nll[0]), grads


# ---------------------------------------------------------------------------
# Full window forward / backward
# ---------------------------------------------------------------------------

def forward_window(
    params: LMParams,
    sub_ids: np.ndarray,      # int (B, T, L)
    sub_mask: np.ndarray,     # (B, T, L)
    targets: np.ndarray,      # int (B, T)
    state,
    masks: dict | None = None,
    collect_gates: bool = False,
):
    """Forward pass over one window; returns (nll_sum, new_state, cache).

    ``nll_sum`` is the float64 sum of per-token negative log-likelihoods.
    ``masks`` are variational dropout masks (identity when None).  The
    cache holds everything the backward pass needs; truncation happens
    because the incoming ``state`` is treated as a constant.
    """
    cfg = params.config
    t_ = params.tensors
    dtype = params.dtype
    B, T, L = sub_ids.shape
    N = B * T
    if masks is None:
        masks = _identity_masks(cfg, B, dtype)
    masks = {k: v.astype(dtype) for k, v in masks.items()}

    flat_ids = sub_ids.reshape(N, L)
    flat_mask = sub_mask.reshape(N, L).astype(dtype)
    vecs = t_["emb"][flat_ids] * flat_mask[:, :, None]
    emb_mask = np.repeat(masks["emb"][:, None, :], T, axis=1).reshape(N, 1, cfg.d_x)
    vecs = vecs * emb_mask

    composed, comp_cache = _compose_batch(params, vecs, flat_mask)
    if cfg.needs_projection:
        hw_in = composed @ t_["proj_w"] + t_["proj_b"]
    else:
        hw_in = composed

    h1, hw1_cache = _highway_batch(hw_in, t_["hw1_wt"], t_["hw1_bt"], t_["hw1_wh"], t_["hw1_bh"])
    h2, hw2_cache = _highway_batch(h1, t_["hw2_wt"], t_["hw2_bt"], t_["hw2_wh"], t_["hw2_bh"])

    words = h2.reshape(B, T, cfg.d_hw)
    h1s, c1s, h2s, c2s = [s.astype(dtype) for s in state]
    lstm1_caches, lstm2_caches = [], []
    outputs = np.empty((B, T, cfg.d_lm), dtype=dtype)
    for step in range(T):
        x1 = words[:, step, :] * masks["input1"]
        h1m = h1s * masks["hidden1"]
        h1s, c1s, cache1 = _lstm_step(
            x1, h1m, c1s, t_["lstm1_wx"], t_["lstm1_wh"], t_["lstm1_b"], cfg.d_lm
        )
        x2 = h1s * masks["input2"]
        h2m = h2s * masks["hidden2"]
        h2s, c2s, cache2 = _lstm_step(
            x2, h2m, c2s, t_["lstm2_wx"], t_["lstm2_wh"], t_["lstm2_b"], cfg.d_lm
        )
        lstm1_caches.append(cache1)
        lstm2_caches.append(cache2)
        outputs[:, step, :] = h2s * masks["output"]

    flat_out = outputs.reshape(N, cfg.d_lm)
    flat_targets = targets.reshape(N)
    nll, probs = _softmax_nll_batch(flat_out, flat_targets, t_["out_w"], t_["out_b"])

    cache = {
        "B": B, "T": T, "L": L,
        "flat_ids": flat_ids, "flat_mask": flat_mask,
        "emb_mask": emb_mask, "vecs_shape": vecs.shape,
        "comp": comp_cache, "composed": composed, "hw_in": hw_in,
        "hw1": hw1_cache, "hw2": hw2_cache,
        "lstm1": lstm1_caches, "lstm2": lstm2_caches,
        "outputs": flat_out, "probs": probs, "targets": flat_targets,
        "masks": masks,
    }
    if collect_gates:
        cache["gates"] = (hw1_cache["t"], hw2_cache["t"])
    new_state = (h1s, c1s, h2s, c2s)
    return float(nll.sum()), new_state, cache


def backward_window(params: LMParams, cache, grad_scale: float):
    """Gradients of ``grad_scale * nll_sum`` for every tensor."""
    cfg = params.config
    t_ = params.tensors
    dtype = params.dtype
    B, T = cache["B"], cache["T"]
    N = B * T
    masks = cache["masks"]
    grads = {k: np.zeros_like(v) for k, v in t_.items()}

    dlogits = cache["probs"].copy()
    dlogits[np.arange(N), cache["targets"]] -= 1.0
    dlogits = (dlogits * grad_scale).astype(dtype)
    grads["out_w"] += cache["outputs"].T @ dlogits
    grads["out_b"] += dlogits.sum(axis=0)
    dout = (dlogits @ t_["out_w"].T).reshape(B, T, cfg.d_lm)

    dwords = np.zeros((B, T, cfg.d_hw), dtype=dtype)
    dh1 = np.zeros((B, cfg.d_lm), dtype=dtype)
    dc1 = np.zeros((B, cfg.d_lm), dtype=dtype)
    dh2 = np.zeros((B, cfg.d_lm), dtype=dtype)
    dc2 = np.zeros((B, cfg.d_lm), dtype=dtype)
    for step in range(T - 1, -1, -1):
        dh2_total = dh2 + dout[:, step, :] * masks["output"]
        dx2, dh2m, dc2 = _lstm_step_backward(
            dh2_total, dc2, cache["lstm2"][step], t_["lstm2_wx"], t_["lstm2_wh"],
            grads, "lstm2",
        )
        dh2 = dh2m * masks["hidden2"]
        dh1_total = dh1 + dx2 * masks["input2"]
        dx1, dh1m, dc1 = _lstm_step_backward(
            dh1_total, dc1, cache["lstm1"][step], t_["lstm1_wx"], t_["lstm1_wh"],
            grads, "lstm1",
        )
        dh1 = dh1m * masks["hidden1"]
        dwords[:, step, :] = dx1 * masks["input1"]

    dh2_flat = dwords.reshape(N, cfg.d_hw)
    dh1_flat = _highway_backward(dh2_flat, cache["hw2"], t_["hw2_wt"], t_["hw2_wh"], grads, "hw2")
    dhw_in = _highway_backward(dh1_flat, cache["hw1"], t_["hw1_wt"], t_["hw1_wh"], grads, "hw1")

    if cfg.needs_projection:
        grads["proj_w"] += cache["composed"].T @ dhw_in
        grads["proj_b"] += dhw_in.sum(axis=0)
        dcomposed = dhw_in @ t_["proj_w"].T
    else:
        dcomposed = dhw_in

    dvecs = _compose_backward(params, dcomposed, cache["vecs_shape"], cache["comp"], grads)
    dvecs = dvecs * cache["emb_mask"] * cache["flat_mask"][:, :, None]
    np.add.at(
        grads["emb"],
        cache["flat_ids"].reshape(-1),
        dvecs.reshape(-1, cfg.d_x),
    )
    return grads
