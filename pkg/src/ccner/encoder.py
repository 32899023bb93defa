"""Small bidirectional transformer encoder in float64 NumPy.

Architecture: character embeddings, multi-head self-attention with a
symmetric linear distance bias (slope 2^(-8(h+1)/H) per head), gated
feed-forward blocks (swish-gated linear units), pre-norm residuals, a final
layer norm, and masked mean pooling.  No learned positional embeddings; the
distance bias carries position.

The forward pass can return a cache from which ``encode_backward`` computes
exact reverse-mode gradients for every parameter and for the input
embeddings.  Masked positions neither attend nor are attended to, their
output rows are zeroed, and their embedding rows receive zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ffn: int
    vocab_size: int
    max_len: int = 2048
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_in: np.ndarray
    w_gate: np.ndarray
    w_out: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class EncoderParams:
    embed: np.ndarray
    layers: list[LayerParams]
    final_g: np.ndarray
    final_b: np.ndarray

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """(name, array) pairs in checkpoint declaration order."""
        yield "embed", self.embed
        for i, lp in enumerate(self.layers):
            for fname in ("wq", "wk", "wv", "wo", "w_in", "w_gate", "w_out",
                          "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                yield f"layer{i}.{fname}", getattr(lp, fname)
        yield "final_g", self.final_g
        yield "final_b", self.final_b

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(
            embed=np.zeros_like(self.embed),
            layers=[
                LayerParams(**{k: np.zeros_like(getattr(lp, k)) for k in lp.__dataclass_fields__})
                for lp in self.layers
            ],
            final_g=np.zeros_like(self.final_g),
            final_b=np.zeros_like(self.final_b),
        )


@dataclass
class HiddenStates:
    """Per-position activations plus the attention mask that produced them."""

    hidden: np.ndarray  # [seq_len, d_model]
    mask: np.ndarray  # [seq_len] bool, True = real token


def init_encoder_params(cfg: EncoderConfig, seed: int) -> EncoderParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE]))
    d, f = cfg.d_model, cfg.d_ffn

    def mat(rows, cols, fan_in):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(rows, cols))

    layers = []
    for _ in range(cfg.n_layers):
        layers.append(
            LayerParams(
                wq=mat(d, d, d), wk=mat(d, d, d), wv=mat(d, d, d), wo=mat(d, d, d),
                w_in=mat(f, d, d), w_gate=mat(f, d, d), w_out=mat(d, f, f),
                ln1_g=np.ones(d), ln1_b=np.zeros(d),
                ln2_g=np.ones(d), ln2_b=np.zeros(d),
            )
        )
    return EncoderParams(
        embed=rng.normal(0.0, 0.02, size=(cfg.vocab_size, d)),
        layers=layers,
        final_g=np.ones(d),
        final_b=np.zeros(d),
    )


def alibi_slopes(n_heads: int) -> np.ndarray:
    return np.array([2.0 ** (-8.0 * (h + 1) / n_heads) for h in range(n_heads)])


def alibi_bias(seq_len: int, n_heads: int) -> np.ndarray:
    """Per-head bias matrices -m_h * |i - j|; symmetric, zero diagonal."""
    if seq_len < 1 or n_heads < 1:
        raise ValueError("seq_len and n_heads must be >= 1")
    pos = np.arange(seq_len)
    dist = np.abs(pos[:, None] - pos[None, :]).astype(float)
    return -alibi_slopes(n_heads)[:, None, None] * dist[None, :, :]


_LN_EPS = 1e-5


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)

def _layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    d_gain = (dy * xhat).sum(axis=0)
    d_bias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _swiglu_forward(x, w_in, w_gate, w_out):
    u = x @ w_in.T
    g = x @ w_gate.T
    s = _sigmoid(u)
    su = u * s
    z = (su * g) @ w_out.T
    return z, (u, g, s, su)


def swiglu(x: np.ndarray, w_in: np.ndarray, w_gate: np.ndarray, w_out: np.ndarray) -> np.ndarray:
    """w_out @ (swish(w_in x) * (w_gate x)) for a vector or rows of vectors."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return _swiglu_forward(x[None, :], w_in, w_gate, w_out)[0][0]
    return _swiglu_forward(x, w_in, w_gate, w_out)[0]


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero entries with probability rate, scale the rest by
    1/(1-rate) so the expectation matches the eval-mode activation.

    Returns (output, scale_mask); multiplying an upstream gradient by
    scale_mask is the exact backward pass.
    """
    if rate == 0.0:
        ones = np.ones_like(x)
        return x.copy(), ones
    keep = rng.random(x.shape) >= rate
    scale_mask = keep / (1.0 - rate)
    return x * scale_mask, scale_mask


def _softmax_rows(scores):
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def encode_forward(
    ids,
    mask,
    params: EncoderParams,
    cfg: EncoderConfig,
    train_mode: bool = False,
    rng_seed: int = 0,
    return_cache: bool = False,
):
    """Forward pass over one sequence.  Deterministic given rng_seed.

    ids: int array [n]; mask: bool array [n], True marks real tokens.
    Dropout is active only in train_mode.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n = ids.shape[0]
    if n == 0:
        raise ValueError("cannot encode an empty sequence")
    if n > cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    if mask.shape != ids.shape:
        raise ValueError("ids and mask must have the same length")
    if not mask.any():
        raise ValueError("at least one position must be unmasked")

    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0xD]))
    rate = cfg.dropout_rate if train_mode else 0.0
    h_cur = params.embed[ids]
    bias = alibi_bias(n, cfg.n_heads)
    neg_inf_cols = ~mask

    cache = {"ids": ids, "mask": mask, "layers": []}
    dh = cfg.d_head

    for lp in params.layers:
        x_in = h_cur
        a, ln1_cache = _layer_norm(x_in, lp.ln1_g, lp.ln1_b)
        q = a @ lp.wq.T
        k = a @ lp.wk.T
        v = a @ lp.wv.T
        qh = q.reshape(n, cfg.n_heads, dh).transpose(1, 0, 2)
        kh = k.reshape(n, cfg.n_heads, dh).transpose(1, 0, 2)
        vh = v.reshape(n, cfg.n_heads, dh).transpose(1, 0, 2)
        scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(dh) + bias
        scores[:, :, neg_inf_cols] = -np.inf
        probs = _softmax_rows(scores)
        ctx_h = probs @ vh
        ctx = ctx_h.transpose(1, 0, 2).reshape(n, cfg.d_model)
        attn_out = ctx @ lp.wo.T
        attn_out, attn_drop = dropout(attn_out, rate, rng)
        x_mid = x_in + attn_out

        a2, ln2_cache = _layer_norm(x_mid, lp.ln2_g, lp.ln2_b)
        z, ffn_cache = _swiglu_forward(a2, lp.w_in, lp.w_gate, lp.w_out)
        z, ffn_drop = dropout(z, rate, rng)
        h_cur = x_mid + z

        cache["layers"].append(
            {
                "x_in": x_in, "a": a, "ln1": ln1_cache,
                "qh": qh, "kh": kh, "vh": vh, "probs": probs, "ctx": ctx,
                "attn_drop": attn_drop,
                "x_mid": x_mid, "a2": a2, "ln2": ln2_cache,
                "ffn": ffn_cache, "ffn_drop": ffn_drop,
            }
        )

    normed, final_cache = _layer_norm(h_cur, params.final_g, params.final_b)
    hidden = np.where(mask[:, None], normed, 0.0)
    cache["final_ln"] = final_cache

    states = HiddenStates(hidden=hidden, mask=mask)
    if return_cache:
        return states, cache
    return states


def encode_backward(d_hidden, cache, params: EncoderParams, cfg: EncoderConfig):
    """Gradients of a scalar loss w.r.t. all parameters and input embeddings.

    d_hidden is the upstream gradient on the forward output.  Returns
    (grads: EncoderParams, d_input: [n, d_model]); grads.embed accumulates
    the per-token rows of d_input, so repeated tokens sum.
    """
    if cache is None or "layers" not in cache:
        raise ValueError("encode_backward requires the cache from encode_forward")
    mask = cache["mask"]
    ids = cache["ids"]
    n = ids.shape[0]
    dh = cfg.d_head
    grads = params.zeros_like()

    d_cur = np.where(mask[:, None], d_hidden, 0.0)
    d_cur, d_fg, d_fb = _layer_norm_backward(d_cur, params.final_g, cache["final_ln"])
    grads.final_g += d_fg
    grads.final_b += d_fb

    for lp, lg, lc in zip(reversed(params.layers), reversed(grads.layers), reversed(cache["layers"])):
        # feed-forward block
        dz = d_cur * lc["ffn_drop"]
        u, g, s, su = lc["ffn"]
        d_sg = dz @ lp.w_out
        lg.w_out += dz.T @ (su * g)
        d_su = d_sg * g
        d_g = d_sg * su
        d_u = d_su * (s + u * s * (1.0 - s))
        lg.w_in += d_u.T @ lc["a2"]
        lg.w_gate += d_g.T @ lc["a2"]
        d_a2 = d_u @ lp.w_in + d_g @ lp.w_gate
        d_x_mid, d_g2, d_b2 = _layer_norm_backward(d_a2, lp.ln2_g, lc["ln2"])
        lg.ln2_g += d_g2
        lg.ln2_b += d_b2
        d_x_mid = d_x_mid + d_cur  # residual skip

        # attention block
        d_attn = d_x_mid * lc["attn_drop"]
        d_ctx = d_attn @ lp.wo
        lg.wo += d_attn.T @ lc["ctx"]
        d_ctx_h = d_ctx.reshape(n, cfg.n_heads, dh).transpose(1, 0, 2)
        probs, qh, kh, vh = lc["probs"], lc["qh"], lc["kh"], lc["vh"]
        d_probs = d_ctx_h @ vh.transpose(0, 2, 1)
        d_vh = probs.transpose(0, 2, 1) @ d_ctx_h
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        d_qh = d_scores @ kh / math.sqrt(dh)
        d_kh = d_scores.transpose(0, 2, 1) @ qh / math.sqrt(dh)
        d_q = d_qh.transpose(1, 0, 2).reshape(n, cfg.d_model)
        d_k = d_kh.transpose(1, 0, 2).reshape(n, cfg.d_model)
        d_v = d_vh.transpose(1, 0, 2).reshape(n, cfg.d_model)
        a = lc["a"]
        lg.wq += d_q.T @ a
        lg.wk += d_k.T @ a
        lg.wv += d_v.T @ a
        d_a = d_q @ lp.wq + d_k @ lp.wk + d_v @ lp.wv
        d_x_in, d_g1, d_b1 = _layer_norm_backward(d_a, lp.ln1_g, lc["ln1"])
        lg.ln1_g += d_g1
        lg.ln1_b += d_b1
        d_cur = d_x_in + d_x_mid  # residual skip

    d_input = d_cur
    np.add.at(grads.embed, ids, d_input)
    return grads, d_input


def pool_mean(states: HiddenStates) -> np.ndarray:
    """Arithmetic mean of the hidden vectors at unmasked positions."""
    if not states.mask.any():
        raise ValueError("cannot pool an all-masked sequence")
    return states.hidden[states.mask].mean(axis=0)
