"""Modular co-attention: scaled dot-product and multi-head attention, the
self-attention (SA) and guided-attention (GA) units, the encoder-decoder
stack and the attention-reduction fusion head.

All modules work on batched inputs of shape (batch, rows, d).  Masks are
boolean arrays of shape (batch, rows) with True on real rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import tensor as T
from .diffcore.layers import MLP, LayerNorm, Linear, Module
from .diffcore.tensor import Tensor


@dataclass
class AttentionConfig:
    num_layers: int = 6
    num_heads: int = 8
    d_model: int = 512
    d_ff: int | None = None
    dropout: float = 0.2
    positional: bool = False

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


def _key_mask(mask: np.ndarray | None, ndim: int) -> np.ndarray | None:
    """Reshape a (batch, n) key mask so it broadcasts over logits of rank ``ndim``."""
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    return mask.reshape(mask.shape[:1] + (1,) * (ndim - 2) + mask.shape[1:])


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes.

    ``key_mask`` has the shape of ``k`` without its last axis; masked keys get
    zero weight.  A query row whose keys are all masked is an error.
    """
    d_k = q.shape[-1]
    if k.shape[-1] != d_k or k.shape[-2] != v.shape[-2]:
        raise T.ShapeError(f"attention shapes disagree: Q{q.shape} K{k.shape} V{v.shape}")
    logits = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(d_k))
    mask = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.ndim == 1:
            mask = key_mask
        else:
            mask = key_mask.reshape(key_mask.shape[:-1] + (1,) + key_mask.shape[-1:])
    weights = T.softmax(logits, axis=-1, mask=mask)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        d = cfg.d_model
        self.num_heads = cfg.num_heads
        self.d_model = d
        self.w_q = Linear(d, d, rng, dtype=dtype)
        self.w_k = Linear(d, d, rng, dtype=dtype)
        self.w_v = Linear(d, d, rng, dtype=dtype)
        self.w_o = Linear(d, d, rng, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        B, n, _ = x.shape
        return T.transpose(T.reshape(x, (B, n, self.num_heads, self.d_model // self.num_heads)), (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        if x_q.shape[-1] != self.d_model or x_kv.shape[-1] != self.d_model:
            raise T.ShapeError(f"multi-head attention expects model dim {self.d_model}, "
                               f"got {x_q.shape} and {x_kv.shape}")
        B, m, d = x_q.shape
        q = self._split(self.w_q(x_q))
        k = self._split(self.w_k(x_kv))
        v = self._split(self.w_v(x_kv))
        heads = scaled_dot_attention(q, k, v, _key_mask(key_mask, 3))
        merged = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (B, m, d))
        return self.w_o(merged)


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: MultiHeadAttention,
                         key_mask: np.ndarray | None = None) -> Tensor:
    """Functional form accepting unbatched (rows, d) inputs."""
    if x_q.ndim == 2:
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[None]
        out = params(T.reshape(x_q, (1,) + x_q.shape), T.reshape(x_kv, (1,) + x_kv.shape), mask)
        return T.reshape(out, x_q.shape)
    return params(x_q, x_kv, key_mask)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, dropout: float, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        self.fc1 = Linear(d, d_ff, rng, dtype=dtype)
        self.fc2 = Linear(d_ff, d, rng, dtype=dtype)
        self.p = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        h = T.dropout(T.relu(self.fc1(x)), self.p, self.training, rng)
        return self.fc2(h)


class _AttentionUnit(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        self.att = MultiHeadAttention(cfg, rng, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout, rng, dtype)
        self.norm1 = LayerNorm(cfg.d_model, dtype=dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype=dtype)
        self.p = cfg.dropout

    def _block(self, x: Tensor, kv: Tensor, kv_mask, rng) -> Tensor:
        a = T.dropout(self.att(x, kv, kv_mask), self.p, self.training, rng)
        x = self.norm1(x + a)
        f = T.dropout(self.ffn(x, rng), self.p, self.training, rng)
        return self.norm2(x + f)


class SAUnit(_AttentionUnit):
    """Self-attention + feed-forward, each followed by residual add and layer norm."""

    def __call__(self, x: Tensor, mask: np.ndarray | None = None, rng=None) -> Tensor:
        return self._block(x, x, mask, rng)


class GAUnit(_AttentionUnit):
    """Queries from ``x``, keys and values from ``y``."""

    def __call__(self, x: Tensor, y: Tensor, y_mask: np.ndarray | None = None, rng=None) -> Tensor:
        return self._block(x, y, y_mask, rng)


def _batched(x: Tensor, mask):
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), (None if mask is None else np.asarray(mask, bool)[None]), True
    return x, mask, False


def sa_unit(x: Tensor, unit: SAUnit, mask: np.ndarray | None = None, rng=None) -> Tensor:
    xb, mb, squeeze = _batched(x, mask)
    out = unit(xb, mb, rng)
    return T.reshape(out, x.shape) if squeeze else out


def ga_unit(x: Tensor, y: Tensor, unit: GAUnit, y_mask: np.ndarray | None = None, rng=None) -> Tensor:
    xb, _, squeeze = _batched(x, None)
    yb, mb, _ = _batched(y, y_mask)
    out = unit(xb, yb, mb, rng)
    return T.reshape(out, x.shape) if squeeze else out


class MCAStack(Module):
    """Encoder-decoder composition: ``L`` SA units on the text stream; the
    other stream runs ``L`` layers of SA followed by GA guided by the final
    text representation."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        self.text_layers = [SAUnit(cfg, rng, dtype) for _ in range(cfg.num_layers)]
        self.other_self = [SAUnit(cfg, rng, dtype) for _ in range(cfg.num_layers)]
        self.other_guided = [GAUnit(cfg, rng, dtype) for _ in range(cfg.num_layers)]

    def __call__(self, text: Tensor, other: Tensor, text_mask=None, other_mask=None, rng=None):
        x = text
        for unit in self.text_layers:
            x = unit(x, text_mask, rng)
        y = other
        for sa, ga in zip(self.other_self, self.other_guided):
            y = sa(y, other_mask, rng)
            y = ga(y, x, text_mask, rng)
        return x, y


def mca_forward(text: Tensor, other: Tensor, stack: MCAStack, text_mask=None, other_mask=None, rng=None):
    """Run ``stack`` and return (X^L, Y^L); accepts unbatched inputs."""
    tb, tm, squeeze = _batched(text, text_mask)
    ob, om, _ = _batched(other, other_mask)
    x, y = stack(tb, ob, tm, om, rng)
    if squeeze:
        return T.reshape(x, text.shape), T.reshape(y, other.shape)
    return x, y


def attention_reduce(x: Tensor, reducer: MLP, mask: np.ndarray | None = None, rng=None,
                     return_weights: bool = False):
    """Collapse rows of ``x`` (batch, m, d) to (batch, d) with weights
    softmax(reducer(x)); masked rows get zero weight."""
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
        mask = None if mask is None else np.asarray(mask, bool)[None]
    B, m, d = x.shape
    scores = T.reshape(reducer(x, rng), (B, m))
    alpha = T.softmax(scores, axis=-1, mask=mask)
    pooled = T.reshape(T.matmul(T.reshape(alpha, (B, 1, m)), x), (B, d))
    if squeeze:
        pooled, alpha = T.reshape(pooled, (d,)), T.reshape(alpha, (m,))
    return (pooled, alpha) if return_weights else pooled


class FusionHead(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, d_z: int | None = None,
                 dtype=T.DEFAULT_DTYPE):
        d = cfg.d_model
        self.d_z = d_z or d
        self.reduce_x = MLP(d, d, 1, cfg.dropout, rng, dtype)
        self.reduce_y = MLP(d, d, 1, cfg.dropout, rng, dtype)
        self.w_x = Linear(d, self.d_z, rng, bias=False, dtype=dtype)
        self.w_y = Linear(d, self.d_z, rng, bias=False, dtype=dtype)
        self.norm = LayerNorm(self.d_z, dtype=dtype)

    def __call__(self, x: Tensor, y: Tensor, x_mask=None, y_mask=None, rng=None) -> Tensor:
        xt = attention_reduce(x, self.reduce_x, x_mask, rng)
        yt = attention_reduce(y, self.reduce_y, y_mask, rng)
        return fuse(xt, yt, self)


def fuse(x_pooled: Tensor, y_pooled: Tensor, head: FusionHead) -> Tensor:
    """LayerNorm(W_x^T x + W_y^T y)."""
    return head.norm(head.w_x(x_pooled) + head.w_y(y_pooled))


def sinusoidal_positions(n: int, d: int, dtype=T.DEFAULT_DTYPE) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
