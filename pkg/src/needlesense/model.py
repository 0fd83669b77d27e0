"""Transformer encoder classifier: forward pass and exact reverse-mode gradients.

Everything is plain numpy.  The architecture is post-norm: each block computes
multi-head self-attention, adds it to its input and layer-normalizes, then a
position-wise feed-forward network with a second residual + layer norm.  Mean
pooling over time feeds a two-layer ReLU head and a softmax output.

Gradients are derived by hand and verified against central finite differences
in the test suite; layer norm uses the full Jacobian (mean and variance are
differentiated through, not frozen).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LAYERNORM_EPS = 1e-9


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 120
    in_features: int = 2
    d_model: int = 64
    num_heads: int = 8
    num_blocks: int = 4
    ffn_dim: int = 128
    num_classes: int = 8
    dropout_rate: float = 0.0
    use_positional_encoding: bool = True

    def __post_init__(self):
        for name in ("seq_len", "in_features", "d_model", "num_heads", "num_blocks", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.num_classes != 8:
            raise ValueError("num_classes is fixed at 8 by the label encoding")
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "in_features": self.in_features,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "num_blocks": self.num_blocks,
            "ffn_dim": self.ffn_dim,
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
            "use_positional_encoding": self.use_positional_encoding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParameters:
    """All model tensors keyed by name; the positional table is fixed, not trained."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    FIXED = ("pos",)

    def trainable_names(self):
        return [name for name in self.tensors if name not in self.FIXED]

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(
            self.config, {k: np.asarray(v, dtype=dtype) for k, v in self.tensors.items()}
        )

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def sinusoidal_positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos table: even columns sine, odd columns cosine."""
    position = np.arange(seq_len)[:, None].astype(float)
    div = np.exp(np.arange(0, d_model, 2) * (-np.log(10000.0) / d_model))
    table = np.zeros((seq_len, d_model))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: (d_model // 2)])
    return table


def init_parameters(config: ModelConfig, seed: int) -> ModelParameters:
    """Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)

    def uniform(shape):
        bound = 1.0 / np.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape)

    t: dict[str, np.ndarray] = {}
    t["input.w"] = uniform((config.in_features, config.d_model))
    t["input.b"] = np.zeros(config.d_model)
    t["pos"] = sinusoidal_positional_encoding(config.seq_len, config.d_model)
    for i in range(config.num_blocks):
        p = f"b{i}."
        for name in ("wq", "wk", "wv", "wo"):
            t[p + name] = uniform((config.d_model, config.d_model))
        t[p + "ln1.g"] = np.ones(config.d_model)
        t[p + "ln1.b"] = np.zeros(config.d_model)
        t[p + "ffn.w1"] = uniform((config.d_model, config.ffn_dim))
        t[p + "ffn.b1"] = np.zeros(config.ffn_dim)
        t[p + "ffn.w2"] = uniform((config.ffn_dim, config.d_model))
        t[p + "ffn.b2"] = np.zeros(config.d_model)
        t[p + "ln2.g"] = np.ones(config.d_model)
        t[p + "ln2.b"] = np.zeros(config.d_model)
    t["head.w1"] = uniform((config.d_model, config.ffn_dim))
    t["head.b1"] = np.zeros(config.ffn_dim)
    t["head.w2"] = uniform((config.ffn_dim, config.num_classes))
    t["head.b2"] = np.zeros(config.num_classes)
    return ModelParameters(config, t)


# Core pieces ---------------------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction before exponentiation)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


# Shifted scores below these floors would exponentiate into subnormals, which
# x86 handles orders of magnitude slower; the discarded mass is < T * e^-80
# relative to the row maximum, far inside every stated tolerance.
_EXP_FLOOR = {np.dtype(np.float32): -80.0, np.dtype(np.float64): -700.0}


def _softmax_inplace(scores: np.ndarray) -> np.ndarray:
    """Row softmax of a freshly allocated score array, reusing its storage."""
    scores -= scores.max(axis=-1, keepdims=True)
    floor = _EXP_FLOOR.get(scores.dtype)
    if floor is not None:
        np.maximum(scores, floor, out=scores)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def attention_head(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention for a single head: softmax(Q K^T / sqrt(d_k)) V."""
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    V = np.asarray(V, dtype=float)
    if Q.shape[-1] == 0:
        raise ValueError("d_k must be positive")
    if K.shape != Q.shape or V.shape[0] != K.shape[0]:
        raise ValueError(f"attention shapes disagree: Q{Q.shape} K{K.shape} V{V.shape}")
    scores = (Q @ K.T) / np.sqrt(Q.shape[-1])
    return softmax(scores, axis=-1) @ V


def _layernorm_forward(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    xhat = x - mean
    var = np.mean(xhat * xhat, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat *= inv_std
    out = xhat * gain
    out += bias
    return out, (xhat, inv_std)


def _layernorm_backward(dout, gain, cache):
    xhat, inv_std = cache
    dxhat = dout * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dout.ndim - 1))
    return dx, (dout * xhat).sum(axis=axes), dout.sum(axis=axes)


def _split_heads(x, num_heads):
    b, t, d = x.shape
    # contiguous copy: batched matmul over strided views falls off the fast path
    return np.ascontiguousarray(x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    b, m, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, m * dk)


def _check_shapes(X, config):
    if X.ndim != 3:
        raise ValueError(f"input must be 3-d (batch, time, features), got {X.ndim}-d")
    if X.shape[1] != config.seq_len:
        raise ValueError(f"time axis has {X.shape[1]} steps, expected {config.seq_len}")
    if X.shape[2] != config.in_features:
        raise ValueError(f"feature axis has {X.shape[2]} channels, expected {config.in_features}")


def embed(params: ModelParameters, X: np.ndarray) -> np.ndarray:
    """Token-wise affine projection plus the positional row for each time index."""
    cfg = params.config
    X = np.asarray(X)
    _check_shapes(X, cfg)
    E = X @ params["input.w"] + params["input.b"]
    if cfg.use_positional_encoding:
        E = E + params["pos"]
    return E


def _attention_forward(E, p, prefix, num_heads):
    scale = 1.0 / math.sqrt(E.shape[-1] // num_heads)
    # scale folded into Q before the T*T matmul: one pass over the small
    # projection instead of the large score array
    Qs = _split_heads((E @ p[prefix + "wq"]) * scale, num_heads)
    K = _split_heads(E @ p[prefix + "wk"], num_heads)
    V = _split_heads(E @ p[prefix + "wv"], num_heads)
    scores = np.matmul(Qs, K.transpose(0, 1, 3, 2))
    P = _softmax_inplace(scores)
    merged = _merge_heads(np.matmul(P, V))
    H = merged @ p[prefix + "wo"]
    return H, (Qs, K, V, P, merged, scale)


def _dropout_mask(shape, rate, rng, dtype):
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


def _block_forward(E, params, index, training=False, rng=None):
    cfg = params.config
    p = params.tensors
    prefix = f"b{index}."
    drop = cfg.dropout_rate if training else 0.0

    H, att_cache = _attention_forward(E, p, prefix, cfg.num_heads)
    mask_h = None
    if drop > 0.0:
        mask_h = _dropout_mask(H.shape, drop, rng, H.dtype)
        H = H * mask_h
    L, ln1_cache = _layernorm_forward(E + H, p[prefix + "ln1.g"], p[prefix + "ln1.b"])

    Z1 = L @ p[prefix + "ffn.w1"] + p[prefix + "ffn.b1"]
    R = np.maximum(Z1, 0.0)
    Z2 = R @ p[prefix + "ffn.w2"] + p[prefix + "ffn.b2"]
    mask_f = None
    if drop > 0.0:
        mask_f = _dropout_mask(Z2.shape, drop, rng, Z2.dtype)
        Z2 = Z2 * mask_f
    O, ln2_cache = _layernorm_forward(L + Z2, p[prefix + "ln2.g"], p[prefix + "ln2.b"])

    if not np.all(np.isfinite(O)):
        raise FloatingPointError(f"non-finite activations in encoder block {index}")
    cache = (E, att_cache, mask_h, ln1_cache, L, Z1, R, mask_f, ln2_cache)
    return O, cache


def encoder_block(params: ModelParameters, index: int, E: np.ndarray) -> np.ndarray:
    """Run one encoder block in inference mode."""
    out, _ = _block_forward(np.asarray(E), params, index)
    return out


def _forward_full(params, X, training=False, rng=None, collect="full"):
    """Forward pass; `collect` picks what survives: "none", "attention", or "full"."""
    cfg = params.config
    X = np.asarray(X, dtype=params.dtype)
    E = embed(params, X)
    block_caches = []
    attention = []
    for i in range(cfg.num_blocks):
        E, cache = _block_forward(E, params, i, training=training, rng=rng)
        if collect == "full":
            block_caches.append(cache)
        if collect in ("full", "attention"):
            attention.append(cache[1][3])
        del cache
    pooled = E.mean(axis=1)
    Z1 = pooled @ params["head.w1"] + params["head.b1"]
    R = np.maximum(Z1, 0.0)
    logits = R @ params["head.w2"] + params["head.b2"]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=-1, keepdims=True)
    probs = exp / total
    logp = shifted - np.log(total)
    cache = (X, block_caches, E, pooled, Z1, R, probs, logp, attention)
    return probs, cache


def forward(params: ModelParameters, X: np.ndarray, return_attention: bool = False):
    """Class probabilities for a batch of windows; rows sum to 1.

    With `return_attention=True` also returns the per-block attention weights,
    each of shape (batch, heads, time, time).
    """
    probs, cache = _forward_full(
        params, X, collect="attention" if return_attention else "none"
    )
    if return_attention:
        return probs, cache[8]
    return probs


def predict(params: ModelParameters, X: np.ndarray, batch_size: int = 256):
    """Chunked inference over a large example set; returns (labels, probs)."""
    X = np.asarray(X)
    probs = np.empty((X.shape[0], params.config.num_classes), dtype=params.dtype)
    for lo in range(0, X.shape[0], batch_size):
        probs[lo : lo + batch_size] = forward(params, X[lo : lo + batch_size])
    return probs.argmax(axis=1), probs


def _attention_backward(dH, E, att_cache, p, prefix, num_heads):
    Qs, K, V, P, merged, scale = att_cache
    b, t, d = E.shape
    grads = {}
    grads[prefix + "wo"] = merged.reshape(-1, d).T @ dH.reshape(-1, d)
    dmerged = dH @ p[prefix + "wo"].T
    dA = _split_heads(dmerged, num_heads)

    dV = np.matmul(P.transpose(0, 1, 3, 2), dA)
    dP = np.matmul(dA, V.transpose(0, 1, 3, 2))
    dP *= P
    dP -= P * dP.sum(axis=-1, keepdims=True)
    dS = dP  # storage reused: dS = P * (dPdt - sum(dPdt * P))
    dQ = np.matmul(dS, K)
    dQ *= scale  # scores used the pre-scaled Qs, so unscale on the small array
    dK = np.matmul(dS.transpose(0, 1, 3, 2), Qs)

    dE = np.zeros_like(E)
    flatE = E.reshape(-1, d)
    for name, grad_heads in (("wq", dQ), ("wk", dK), ("wv", dV)):
        flat = _merge_heads(grad_heads).reshape(-1, d)
        grads[prefix + name] = flatE.T @ flat
        dE += (flat @ p[prefix + name].T).reshape(b, t, d)
    return dE, grads


def _block_backward(dO, params, index, cache):
    cfg = params.config
    p = params.tensors
    prefix = f"b{index}."
    E, att_cache, mask_h, ln1_cache, L, Z1, R, mask_f, ln2_cache = cache
    grads = {}

    dsum2, dg2, db2 = _layernorm_backward(dO, p[prefix + "ln2.g"], ln2_cache)
    grads[prefix + "ln2.g"] = dg2
    grads[prefix + "ln2.b"] = db2

    dZ2 = dsum2 if mask_f is None else dsum2 * mask_f
    d = dZ2.shape[-1]
    grads[prefix + "ffn.w2"] = R.reshape(-1, R.shape[-1]).T @ dZ2.reshape(-1, d)
    grads[prefix + "ffn.b2"] = dZ2.sum(axis=(0, 1))
    dR = dZ2 @ p[prefix + "ffn.w2"].T
    dZ1 = dR * (Z1 > 0)
    grads[prefix + "ffn.w1"] = L.reshape(-1, d).T @ dZ1.reshape(-1, dZ1.shape[-1])
    grads[prefix + "ffn.b1"] = dZ1.sum(axis=(0, 1))
    dL = dsum2 + dZ1 @ p[prefix + "ffn.w1"].T

    dsum1, dg1, db1 = _layernorm_backward(dL, p[prefix + "ln1.g"], ln1_cache)
    grads[prefix + "ln1.g"] = dg1
    grads[prefix + "ln1.b"] = db1

    dH = dsum1 if mask_h is None else dsum1 * mask_h
    dE_att, att_grads = _attention_backward(dH, E, att_cache, p, prefix, cfg.num_heads)
    grads.update(att_grads)
    return dsum1 + dE_att, grads


def loss_and_gradients(params: ModelParameters, X: np.ndarray, y: np.ndarray, rng=None):
    """Mean cross-entropy over the batch plus exact gradients for every trainable tensor."""
    cfg = params.config
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != np.asarray(X).shape[0]:
        raise ValueError("labels must be a 1-d array matching the batch size")
    if y.size == 0:
        raise ValueError("batch is empty")
    if y.min() < 0 or y.max() >= cfg.num_classes:
        raise ValueError(f"labels must lie in 0..{cfg.num_classes - 1}")

    training = cfg.dropout_rate > 0.0 and rng is not None
    probs, cache = _forward_full(params, X, training=training, rng=rng)
    X64, block_caches, E_out, pooled, Z1, R, probs, logp, _ = cache
    b, t, d = E_out.shape

    loss = float(-logp[np.arange(b), y].mean())

    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b

    grads["head.w2"] = R.T @ dlogits
    grads["head.b2"] = dlogits.sum(axis=0)
    dR = dlogits @ params["head.w2"].T
    dZ1 = dR * (Z1 > 0)
    grads["head.w1"] = pooled.T @ dZ1
    grads["head.b1"] = dZ1.sum(axis=0)
    dpooled = dZ1 @ params["head.w1"].T

    dE = np.broadcast_to(dpooled[:, None, :] / t, (b, t, d)).copy()
    for i in reversed(range(cfg.num_blocks)):
        dE, block_grads = _block_backward(dE, params, i, block_caches[i])
        grads.update(block_grads)

    f = cfg.in_features
    grads["input.w"] = X64.reshape(-1, f).T @ dE.reshape(-1, d)
    grads["input.b"] = dE.sum(axis=(0, 1))
    return loss, grads
