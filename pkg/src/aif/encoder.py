"""A small relative-position transformer encoder in numpy with hand-written backpropagation.

Inputs are token + segment embeddings; position enters only through the
parameter-free sinusoidal relative position table added to keys and values
inside attention. Each block is attention -> Add&Norm -> FFN -> Add&Norm.
All arithmetic is float64.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .corpus import PAD_ID, PretrainExample, TokenSequence

LN_EPS = 1e-5
INIT_STD = 0.02


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    vocab_size: int = 100
    max_seq_len: int = 64
    rpe_dim: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.rpe_dim is None:
            object.__setattr__(self, "rpe_dim", self.d_k if self.num_heads > 0 else 0)
        for name in ("num_heads", "d_model", "d_ff", "vocab_size", "max_seq_len", "rpe_dim"):
            if getattr(self, name) < 1:
                raise EncoderError(f"{name} must be >= 1")
        if self.num_layers < 0:
            raise EncoderError("num_layers must be >= 0")
        if self.d_model % self.num_heads:
            raise EncoderError("d_model must be divisible by num_heads")
        if self.rpe_dim != self.d_k:
            raise EncoderError("rpe_dim must equal d_model / num_heads")
        if self.rpe_dim % 2:
            raise EncoderError("rpe_dim must be even")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads

    def as_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Relative positions
# --------------------------------------------------------------------------

class RelativePositionTable:
    """``values[delta + max_seq_len - 1, c]`` for delta = j - i.

    Even channels hold ``sin(delta / 10000**(2k/d_z))`` and odd channels the
    matching cosine, where ``k = c // 2``.
    """

    def __init__(self, max_seq_len: int, d_z: int):
        if d_z % 2:
            raise EncoderError("d_z must be even")
        self.max_seq_len = max_seq_len
        self.d_z = d_z
        deltas = np.arange(-max_seq_len + 1, max_seq_len, dtype=np.float64)
        k = np.arange(d_z // 2, dtype=np.float64)
        angles = deltas[:, None] / np.power(10000.0, 2.0 * k / d_z)[None, :]
        values = np.empty((len(deltas), d_z))
        values[:, 0::2] = np.sin(angles)
        values[:, 1::2] = np.cos(angles)
        self.values = values
        self._pairwise: dict[int, np.ndarray] = {}

    def lookup(self, delta: int) -> np.ndarray:
        if abs(delta) >= self.max_seq_len:
            raise EncoderError(f"relative distance {delta} out of range for max_seq_len {self.max_seq_len}")
        return self.values[delta + self.max_seq_len - 1]

    def pairwise(self, n: int) -> np.ndarray:
        """(n, n, d_z) array with ``out[i, j] = alpha[j - i]``."""
        if n > self.max_seq_len:
            raise EncoderError(f"sequence length {n} exceeds max_seq_len {self.max_seq_len}")
        if n not in self._pairwise:
            idx = np.arange(n)[None, :] - np.arange(n)[:, None] + self.max_seq_len - 1
            self._pairwise[n] = self.values[idx]
        return self._pairwise[n]


def rpe_lookup(delta: int, table: RelativePositionTable) -> np.ndarray:
    return table.lookup(delta)


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

LAYER_TENSORS = ("W_Q", "W_K", "W_V", "W_O", "ln1_gain", "ln1_bias",
                 "W1", "b1", "W2", "b2", "ln2_gain", "ln2_bias")
HEAD_TENSORS = ("mlm_head", "nsp_head", "span_head", "cls_head")


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in checkpoint order."""
    d, V = config.d_model, config.vocab_size
    shapes = {"token_embed": (V, d), "segment_embed": (2, d)}
    for layer in range(config.num_layers):
        per = {"W_Q": (d, d), "W_K": (d, d), "W_V": (d, d), "W_O": (d, d),
               "ln1_gain": (d,), "ln1_bias": (d,),
               "W1": (d, config.d_ff), "b1": (config.d_ff,),
               "W2": (config.d_ff, d), "b2": (d,),
               "ln2_gain": (d,), "ln2_bias": (d,)}
        for name in LAYER_TENSORS:
            shapes[f"layers.{layer}.{name}"] = per[name]
    shapes.update({"mlm_head": (d, V), "nsp_head": (d, 2), "span_head": (d, 2), "cls_head": (d, 2)})
    return shapes


def init_params(config: EncoderConfig, std: float = INIT_STD) -> dict[str, np.ndarray]:
    """Weights ~ N(0, std^2) from ``config.rng_seed``; biases zero, layer-norm gains one."""
    rng = np.random.default_rng(config.rng_seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_gain"):
            params[name] = np.ones(shape)
        elif leaf.endswith("_bias") or leaf in ("b1", "b2"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def layer_params(params: dict[str, np.ndarray], layer: int) -> dict[str, np.ndarray]:
    prefix = f"layers.{layer}."
    return {name: params[prefix + name] for name in LAYER_TENSORS}


def check_params(params: dict[str, np.ndarray], config: EncoderConfig) -> None:
    for name, shape in param_shapes(config).items():
        if name not in params:
            raise EncoderError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise EncoderError(f"{name}: expected shape {shape}, got {params[name].shape}")
        if not np.all(np.isfinite(params[name])):
            raise EncoderError(f"{name} has non-finite values")


# --------------------------------------------------------------------------
# Building blocks (forward + backward)
# --------------------------------------------------------------------------

def embed_input(seq: TokenSequence, params: dict[str, np.ndarray],
                config: EncoderConfig | None = None) -> np.ndarray:
    """Row t is ``token_embed[token_t] + segment_embed[segment_t]``."""
    tokens = np.asarray(seq.tokens, dtype=np.int64)
    segs = np.asarray(seq.segment_ids, dtype=np.int64)
    return _embed(tokens, segs, params, config)


def _embed(tokens, segs, params, config=None):
    V = params["token_embed"].shape[0]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
        raise EncoderError(f"token id out of range [0, {V})")
    if segs.size and (segs.min() < 0 or segs.max() > 1):
        raise EncoderError("segment ids must be 0 or 1")
    if config is not None and tokens.shape[-1] > config.max_seq_len:
        raise EncoderError(f"sequence length {tokens.shape[-1]} exceeds max_seq_len {config.max_seq_len}")
    return params["token_embed"][tokens] + params["segment_embed"][segs]


def _rel_scores(Q, A):
    """einsum('bhic,ijc->bhij', Q, A) as a batched matmul over i."""
    B, H, n, c = Q.shape
    Qt = Q.transpose(2, 0, 1, 3).reshape(n, B * H, c)
    R = np.matmul(Qt, A.transpose(0, 2, 1))
    return R.reshape(n, B, H, n).transpose(1, 2, 0, 3)


def _rel_values(P, A):
    """einsum('bhij,ijc->bhic', P, A)."""
    B, H, n, _ = P.shape
    Pt = P.transpose(2, 0, 1, 3).reshape(n, B * H, n)
    R = np.matmul(Pt, A)
    return R.reshape(n, B, H, A.shape[-1]).transpose(1, 2, 0, 3)


def _split_heads(X, H):
    B, n, d = X.shape
    return X.reshape(B, n, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(X):
    B, H, n, c = X.shape
    return X.transpose(0, 2, 1, 3).reshape(B, n, H * c)


def softmax(scores, axis=-1):
    m = np.max(scores, axis=axis, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=axis, keepdims=True)


def attention_layer(X, W_Q, W_K, W_V, W_O, num_heads: int, table: RelativePositionTable | None,
                    key_mask=None, return_cache: bool = False):
    """Multi-head self-attention with relative position terms on keys and values.

    ``X`` is (n, d) or (B, n, d). ``key_mask`` (same leading shape, bool) marks
    keys that may be attended to. ``table=None`` drops the relative terms.
    """
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
        key_mask = None if key_mask is None else np.asarray(key_mask)[None]
    B, n, d = X.shape
    if n < 1:
        raise EncoderError("attention needs at least one position")
    for W in (W_Q, W_K, W_V, W_O):
        if W.shape != (d, d):
            raise EncoderError(f"projection shape {W.shape} does not match d_model {d}")
    H = num_heads
    dk = d // H
    Q = _split_heads(X @ W_Q, H)
    K = _split_heads(X @ W_K, H)
    Vv = _split_heads(X @ W_V, H)
    A = table.pairwise(n) if table is not None else np.zeros((n, n, dk))
    if A.shape[-1] != dk:
        raise EncoderError("relative position width must equal d_k")
    scale = 1.0 / np.sqrt(dk)
    S = (Q @ K.transpose(0, 1, 3, 2) + _rel_scores(Q, A)) * scale
    if key_mask is not None:
        S = np.where(np.asarray(key_mask, dtype=bool)[:, None, None, :], S, -np.inf)
    P = softmax(S)
    O = P @ Vv + _rel_values(P, A)
    C = _merge_heads(O)
    out = C @ W_O
    if squeeze:
        out = out[0]
    if not return_cache:
        return out
    cache = dict(X=X, Q=Q, K=K, V=Vv, A=A, P=P, C=C, H=H, scale=scale, squeeze=squeeze)
    return out, cache


def attention_backward(dout, cache, W_Q, W_K, W_V, W_O):
    """Returns (dX, dW_Q, dW_K, dW_V, dW_O)."""
    if cache["squeeze"]:
        dout = dout[None]
    X, Q, K, Vv, A, P, C = (cache[k] for k in ("X", "Q", "K", "V", "A", "P", "C"))
    H, scale = cache["H"], cache["scale"]
    B, n, d = X.shape
    dW_O = C.reshape(-1, d).T @ dout.reshape(-1, d)
    dO = _split_heads(dout @ W_O.T, H)
    dP = dO @ Vv.transpose(0, 1, 3, 2) + _rel_scores(dO, A)
    dV = P.transpose(0, 1, 3, 2) @ dO
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) * scale
    dQ = dS @ K + _rel_values(dS, A)
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dQm, dKm, dVm = _merge_heads(dQ), _merge_heads(dK), _merge_heads(dV)
    Xf = X.reshape(-1, d)
    dW_Q = Xf.T @ dQm.reshape(-1, d)
    dW_K = Xf.T @ dKm.reshape(-1, d)
    dW_V = Xf.T @ dVm.reshape(-1, d)
    dX = dQm @ W_Q.T + dKm @ W_K.T + dVm @ W_V.T
    if cache["squeeze"]:
        dX = dX[0]
    return dX, dW_Q, dW_K, dW_V, dW_O


def ffn(X, W1, b1, W2, b2, return_cache: bool = False):
    """``max(0, X W1 + b1) W2 + b2``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != W1.shape[0] or W1.shape[1] != b1.shape[-1] \
            or W2.shape[0] != W1.shape[1] or W2.shape[1] != np.shape(b2)[-1]:
        raise EncoderError("ffn shape mismatch")
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    out = hidden @ W2 + b2
    if return_cache:
        return out, (X, pre, hidden)
    return out


def ffn_backward(dout, cache, W1, W2):
    X, pre, hidden = cache
    d_in, d_ff = W1.shape
    dW2 = hidden.reshape(-1, d_ff).T @ dout.reshape(-1, W2.shape[1])
    db2 = dout.reshape(-1, W2.shape[1]).sum(axis=0)
    dpre = (dout @ W2.T) * (pre > 0)
    dW1 = X.reshape(-1, d_in).T @ dpre.reshape(-1, d_ff)
    db1 = dpre.reshape(-1, d_ff).sum(axis=0)
    dX = dpre @ W1.T
    return dX, dW1, db1, dW2, db2


def layer_norm(X, gain, bias, eps: float = LN_EPS, return_cache: bool = False):
    mu = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv
    out = xhat * gain + bias
    if return_cache:
        return out, (xhat, inv)
    return out


def layer_norm_backward(dout, cache, gain):
    xhat, inv = cache
    d = xhat.shape[-1]
    dgain = (dout * xhat).reshape(-1, d).sum(axis=0)
    dbias = dout.reshape(-1, d).sum(axis=0)
    dxhat = dout * gain
    dX = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dX, dgain, dbias


# --------------------------------------------------------------------------
# Full encoder
# --------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """Per-layer caches needed by :func:`encoder_backward`."""
    tokens: np.ndarray
    segments: np.ndarray
    valid: np.ndarray
    layers: list[dict] = field(default_factory=list)

    def attention_probs(self) -> list[np.ndarray]:
        return [layer["attn"]["P"] for layer in self.layers]


@dataclass
class Batch:
    tokens: np.ndarray     # (B, n) input ids, masking already applied
    segments: np.ndarray   # (B, n)
    valid: np.ndarray      # (B, n) bool, False on padding

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], segments: Sequence[Sequence[int]]) -> "Batch":
        n = max(len(s) for s in seqs)
        B = len(seqs)
        tokens = np.full((B, n), PAD_ID, dtype=np.int64)
        segs = np.zeros((B, n), dtype=np.int64)
        valid = np.zeros((B, n), dtype=bool)
        for b, (s, g) in enumerate(zip(seqs, segments)):
            tokens[b, :len(s)] = s
            segs[b, :len(g)] = g
            valid[b, :len(s)] = True
        return cls(tokens, segs, valid)


def forward_batch(batch: Batch, params: dict[str, np.ndarray], config: EncoderConfig,
                  table: RelativePositionTable | None = None):
    """Returns (hidden (B, n, d), ForwardTrace)."""
    if table is None:
        table = _table_for(config)
    X = _embed(batch.tokens, batch.segments, params, config)
    trace = ForwardTrace(batch.tokens, batch.segments, batch.valid)
    for layer in range(config.num_layers):
        p = layer_params(params, layer)
        attn, attn_cache = attention_layer(X, p["W_Q"], p["W_K"], p["W_V"], p["W_O"],
                                           config.num_heads, table, key_mask=batch.valid,
                                           return_cache=True)
        Y1, ln1_cache = layer_norm(X + attn, p["ln1_gain"], p["ln1_bias"], return_cache=True)
        F, ffn_cache = ffn(Y1, p["W1"], p["b1"], p["W2"], p["b2"], return_cache=True)
        X, ln2_cache = layer_norm(Y1 + F, p["ln2_gain"], p["ln2_bias"], return_cache=True)
        trace.layers.append(dict(attn=attn_cache, ln1=ln1_cache, ffn=ffn_cache, ln2=ln2_cache))
    return X, trace


def encoder_backward(dhidden, trace: ForwardTrace, params: dict[str, np.ndarray],
                     config: EncoderConfig) -> dict[str, np.ndarray]:
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dX = dhidden
    for layer in reversed(range(config.num_layers)):
        p = layer_params(params, layer)
        c = trace.layers[layer]
        pre = f"layers.{layer}."
        dR2, grads[pre + "ln2_gain"], grads[pre + "ln2_bias"] = layer_norm_backward(dX, c["ln2"], p["ln2_gain"])
        dY1, grads[pre + "W1"], grads[pre + "b1"], grads[pre + "W2"], grads[pre + "b2"] = \
            ffn_backward(dR2, c["ffn"], p["W1"], p["W2"])
        dY1 = dY1 + dR2
        dR1, grads[pre + "ln1_gain"], grads[pre + "ln1_bias"] = layer_norm_backward(dY1, c["ln1"], p["ln1_gain"])
        dXa, grads[pre + "W_Q"], grads[pre + "W_K"], grads[pre + "W_V"], grads[pre + "W_O"] = \
            attention_backward(dR1, c["attn"], p["W_Q"], p["W_K"], p["W_V"], p["W_O"])
        dX = dR1 + dXa
    np.add.at(grads["token_embed"], trace.tokens, dX)
    np.add.at(grads["segment_embed"], trace.segments, dX)
    return grads


_TABLES: dict[tuple[int, int], RelativePositionTable] = {}


def _table_for(config: EncoderConfig) -> RelativePositionTable:
    key = (config.max_seq_len, config.rpe_dim)
    if key not in _TABLES:
        _TABLES[key] = RelativePositionTable(*key)
    return _TABLES[key]


def encoder_forward(seq: TokenSequence, params: dict[str, np.ndarray], config: EncoderConfig):
    """Single-sequence forward. Returns (hidden (n, d), cls_vector (d,), ForwardTrace)."""
    batch = Batch.from_sequences([seq.tokens], [seq.segment_ids])
    hidden, trace = forward_batch(batch, params, config)
    return hidden[0], hidden[0, 0].copy(), trace


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def _cross_entropy(logits, targets):
    """Mean cross-entropy and its gradient w.r.t. logits (rows = examples)."""
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    k = len(targets)
    loss = -logp[np.arange(k), targets].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(k), targets] -= 1.0
    return loss, dlogits / k


@dataclass
class LossResult:
    total: float
    parts: dict[str, float]
    grads: dict[str, np.ndarray] | None
    no_masked_tokens: bool = False


def pretrain_batch_arrays(batch: Sequence[PretrainExample]):
    seqs = [ex.input_ids() for ex in batch]
    b = Batch.from_sequences(seqs, [ex.token_seq.segment_ids for ex in batch])
    mlm_rows, mlm_cols, mlm_labels = [], [], []
    span_rows, span_cols, span_labels = [], [], []
    for i, ex in enumerate(batch):
        for pos in sorted(ex.masking.masked_positions):
            mlm_rows.append(i)
            mlm_cols.append(pos)
            mlm_labels.append(ex.masking.labels[pos])
        for pos in range(len(ex.token_seq)):
            if ex.token_seq.is_special(pos):
                continue
            span_rows.append(i)
            span_cols.append(pos)
            inside = ex.span_targets is not None and ex.span_targets[0] <= pos <= ex.span_targets[1]
            span_labels.append(int(inside))
    nsp = np.array([ex.nsp_label for ex in batch], dtype=np.int64)
    as_idx = lambda v: np.asarray(v, dtype=np.int64)
    return (b, (as_idx(mlm_rows), as_idx(mlm_cols), as_idx(mlm_labels)), nsp,
            (as_idx(span_rows), as_idx(span_cols), as_idx(span_labels)))


def pretrain_loss(batch: Sequence[PretrainExample], params: dict[str, np.ndarray],
                  config: EncoderConfig, with_grads: bool = True) -> LossResult:
    """Sum of mean MLM, NSP and span cross-entropies, with exact gradients."""
    if not batch:
        raise EncoderError("empty batch")
    b, (mr, mc, ml), nsp, (sr, sc, sl) = pretrain_batch_arrays(batch)
    hidden, trace = forward_batch(b, params, config)
    dhidden = np.zeros_like(hidden)
    grads = {}

    no_masked = len(ml) == 0
    if no_masked:
        warnings.warn("batch has no masked tokens; MLM term set to 0", RuntimeWarning, stacklevel=2)
        mlm = 0.0
        grads["mlm_head"] = np.zeros_like(params["mlm_head"])
    else:
        h = hidden[mr, mc]
        mlm, dlog = _cross_entropy(h @ params["mlm_head"], ml)
        grads["mlm_head"] = h.T @ dlog
        np.add.at(dhidden, (mr, mc), dlog @ params["mlm_head"].T)

    cls = hidden[:, 0]
    nsp_loss, dlog = _cross_entropy(cls @ params["nsp_head"], nsp)
    grads["nsp_head"] = cls.T @ dlog
    dhidden[:, 0] += dlog @ params["nsp_head"].T

    if len(sl):
        h = hidden[sr, sc]
        span_loss, dlog = _cross_entropy(h @ params["span_head"], sl)
        grads["span_head"] = h.T @ dlog
        np.add.at(dhidden, (sr, sc), dlog @ params["span_head"].T)
    else:
        span_loss = 0.0
        grads["span_head"] = np.zeros_like(params["span_head"])

    total = mlm + nsp_loss + span_loss
    parts = {"mlm": float(mlm), "nsp": float(nsp_loss), "span": float(span_loss)}
    if not with_grads:
        return LossResult(float(total), parts, None, no_masked)
    body = encoder_backward(dhidden, trace, params, config)
    body.update(grads)
    body["cls_head"] = np.zeros_like(params["cls_head"])
    return LossResult(float(total), parts, body, no_masked)


def classification_loss(batch: Batch, labels: np.ndarray, params: dict[str, np.ndarray],
                        config: EncoderConfig, with_grads: bool = True):
    """Cross-entropy of ``cls_head`` over the [CLS] vectors.

    Returns (loss, class probabilities (B, 2), grads or None).
    """
    hidden, trace = forward_batch(batch, params, config)
    cls = hidden[:, 0]
    logits = cls @ params["cls_head"]
    loss, dlog = _cross_entropy(logits, labels)
    probs = softmax(logits)
    if not with_grads:
        return float(loss), probs, None
    dhidden = np.zeros_like(hidden)
    dhidden[:, 0] = dlog @ params["cls_head"].T
    grads = encoder_backward(dhidden, trace, params, config)
    grads["cls_head"] = cls.T @ dlog
    for name in ("mlm_head", "nsp_head", "span_head"):
        grads[name] = np.zeros_like(params[name])
    return float(loss), probs, grads

