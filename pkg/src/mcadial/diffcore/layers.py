"""Parameterised building blocks on top of :mod:`mcadial.diffcore.tensor`."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1


class Module:
    """Parameter container.  Parameters are the ``Tensor`` attributes with
    ``requires_grad``; submodules may be attributes or lists of modules."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise T.ShapeError(f"parameter {name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.zero_grad()


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=T.DEFAULT_DTYPE):
        self.d_in, self.d_out = d_in, d_out
        self.weight = _param(glorot(rng, d_in, d_out), dtype)
        self.bias = _param(np.zeros(d_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"Linear expects last extent {self.d_in}, got shape {x.shape}")
        if x.ndim == 1:
            return T.reshape(self(T.reshape(x, (1, self.d_in))), (self.d_out,))
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=T.DEFAULT_DTYPE):
        self.eps = eps
        self.gamma = _param(np.ones(dim), dtype)
        self.beta = _param(np.zeros(dim), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """``fc(hidden) - ReLU - Dropout(p) - fc(d_out)``."""

    def __init__(self, d_in: int, hidden: int, d_out: int, dropout: float, rng: np.random.Generator,
                 dtype=T.DEFAULT_DTYPE):
        self.fc1 = Linear(d_in, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, d_out, rng, dtype=dtype)
        self.p = dropout

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = T.relu(self.fc1(x))
        h = T.dropout(h, self.p, self.training, rng)
        return self.fc2(h)


class EmbeddingTable(Module):
    """Token embeddings; row ``PAD_ID`` is zero and never updated, row ``UNK_ID``
    stands for out-of-vocabulary tokens."""

    def __init__(self, vocab_size: int, dim: int = 300, rng: np.random.Generator | None = None,
                 init: np.ndarray | None = None, dtype=T.DEFAULT_DTYPE):
        if vocab_size < 2:
            raise ValueError("vocabulary needs at least PAD and UNK rows")
        self.vocab_size, self.dim = vocab_size, dim
        if init is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            init = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
        rows = np.array(init, dtype=dtype, copy=True)
        if rows.shape != (vocab_size, dim):
            raise T.ShapeError(f"embedding init has shape {rows.shape}, expected {(vocab_size, dim)}")
        rows[PAD_ID] = 0.0
        self.rows = _param(rows, dtype)

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"token id out of range [0, {self.vocab_size})")
        return T.take_rows(self.rows, ids, frozen_rows=(PAD_ID,))


def load_word_vectors(path: str | Path, vocab: dict[str, int], dim: int = 300,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Build an embedding matrix for ``vocab`` from a text vector file
    (``token f1 ... f_dim`` per line).  Tokens missing from the file keep a
    uniform(-0.1, 0.1) draw."""
    rng = rng if rng is not None else np.random.default_rng(0)
    size = max(vocab.values()) + 1
    mat = rng.uniform(-0.1, 0.1, size=(size, dim))
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected token + {dim} floats, got {len(parts) - 1} values")
            idx = vocab.get(parts[0])
            if idx is not None:
                mat[idx] = np.asarray(parts[1:], dtype=np.float64)
                hits += 1
    mat[PAD_ID] = 0.0
    log.info("loaded %d/%d word vectors from %s", hits, len(vocab), path)
    return mat


class RecurrentEncoder(Module):
    """Single-layer LSTM over right-padded batches.

    Gate order in the packed weights is input, forget, cell, output.  Padded
    steps carry the previous state forward, so the returned final state is the
    state after each sequence's last real token.
    """

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        self.d_in, self.hidden = d_in, hidden
        self.w_ih = _param(glorot(rng, d_in, 4 * hidden), dtype)
        self.w_hh = _param(np.concatenate([_orthogonal(rng, hidden) for _ in range(4)], axis=1), dtype)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.bias = _param(b, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None, return_sequence: bool = False):
        """``x``: (batch, time, d_in), ``mask``: (batch, time) with True on real tokens.

        Returns the final hidden state (batch, hidden) or, with
        ``return_sequence``, the pair (states (batch, time, hidden), final).
        """
        if x.ndim != 3 or x.shape[1] == 0:
            raise T.ShapeError(f"lstm_encode needs a nonempty (batch, time, dim) input, got {x.shape}")
        B, steps, _ = x.shape
        H = self.hidden
        pre = T.matmul(x, self.w_ih) + self.bias
        h = Tensor(np.zeros((B, H), dtype=x.dtype))
        c = Tensor(np.zeros((B, H), dtype=x.dtype))
        outs = []
        for t in range(steps):
            gates = pre[:, t, :] + T.matmul(h, self.w_hh)
            i = T.sigmoid(gates[:, :H])
            f = T.sigmoid(gates[:, H:2 * H])
            g = T.tanh(gates[:, 2 * H:3 * H])
            o = T.sigmoid(gates[:, 3 * H:])
            c_new = f * c + i * g
            h_new = o * T.tanh(c_new)
            if mask is not None and not mask[:, t].all():
                m = mask[:, t:t + 1].astype(x.dtype)
                c = c_new * m + c * (1.0 - m)
                h = h_new * m + h * (1.0 - m)
            else:
                c, h = c_new, h_new
            outs.append(h)
        if return_sequence:
            return T.stack(outs, axis=1), h
        return h


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def lstm_encode(seq: Tensor, enc: RecurrentEncoder) -> Tensor:
    """Final hidden state of ``enc`` over a single (time, dim) sequence."""
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise T.ShapeError(f"lstm_encode needs a nonempty (time, dim) sequence, got {seq.shape}")
    return enc(T.reshape(seq, (1,) + seq.shape))[0]
