"""Dialog models built from MCA stacks, the discriminative decoder and losses."""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data.batching import RoundBatch, pad_ids
from .data.text import MAX_OPTION_LEN
from .diffcore import tensor as T
from .diffcore.layers import PAD_ID, EmbeddingTable, Linear, Module, RecurrentEncoder
from .diffcore.tensor import Tensor
from .mca import AttentionConfig, FusionHead, MCAStack, sinusoidal_positions

log = logging.getLogger(__name__)

MAX_CONCAT_LEN = 220
PROB_FLOOR = 1e-12


class Variant(str, enum.Enum):
    MCA_I = "MCA-I"
    MCA_H = "MCA-H"
    MCA_I_HCONCQ = "MCA-I-HConcQ"
    MCA_I_HGUIDEDQ = "MCA-I-HGuidedQ"
    MCA_I_VGH = "MCA-I-VGH"
    MCA_I_H = "MCA-I-H"

    @classmethod
    def parse(cls, name) -> Variant:
        if isinstance(name, Variant):
            return name
        key = str(name).strip().lower()
        for v in cls:
            if v.value.lower() == key:
                return v
        raise ValueError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def uses_image(self) -> bool:
        return self is not Variant.MCA_H

    @property
    def uses_history(self) -> bool:
        return self is not Variant.MCA_I


@dataclass
class ModelConfig:
    variant: str = Variant.MCA_I_H.value
    vocab_size: int = 2
    embed_dim: int = 300
    num_layers: int = 6
    num_heads: int = 8
    d_model: int = 512
    d_ff: int | None = None
    dropout: float = 0.2
    positional: bool = False
    feature_dim: int = 2048
    seed: int = 0
    dtype: str = "float32"
    vocab: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant).value
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.num_layers, self.num_heads, self.d_model, self.d_ff, self.dropout, self.positional)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class DialogModel(Module):
    """One of the six variants.  ``forward`` returns candidate logits (B, N)."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.variant = Variant.parse(cfg.variant)
        dtype = np.dtype(cfg.dtype).type
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[0])
        att = cfg.attention
        d = cfg.d_model
        v = self.variant
        self.embedding = EmbeddingTable(cfg.vocab_size, cfg.embed_dim, rng, dtype=dtype)
        self.question_encoder = RecurrentEncoder(cfg.embed_dim, d, rng, dtype)
        self.option_encoder = RecurrentEncoder(cfg.embed_dim, d, rng, dtype)
        if v in (Variant.MCA_H, Variant.MCA_I_HGUIDEDQ, Variant.MCA_I_VGH, Variant.MCA_I_H):
            self.history_encoder = RecurrentEncoder(cfg.embed_dim, d, rng, dtype)
        if v.uses_image:
            self.image_proj = Linear(cfg.feature_dim, d, rng, dtype=dtype)
        if v in (Variant.MCA_I, Variant.MCA_I_HCONCQ, Variant.MCA_I_HGUIDEDQ, Variant.MCA_I_VGH, Variant.MCA_I_H):
            self.mca_image = MCAStack(att, rng, dtype)
            self.head_image = FusionHead(att, rng, dtype=dtype)
        if v in (Variant.MCA_H, Variant.MCA_I_H):
            self.mca_history = MCAStack(att, rng, dtype)
            self.head_history = FusionHead(att, rng, dtype=dtype)
        if v is Variant.MCA_I_HGUIDEDQ:
            self.mca_guide = MCAStack(att, rng, dtype)
        if v is Variant.MCA_I_VGH:
            self.mca_ground = MCAStack(att, rng, dtype)
            self.mca_history = MCAStack(att, rng, dtype)
            self.head_history = FusionHead(att, rng, dtype=dtype)
        if v in (Variant.MCA_I_VGH, Variant.MCA_I_H):
            self.out_proj = Linear(2 * d, d, rng, dtype=dtype)

    def set_embeddings(self, matrix: np.ndarray) -> None:
        """Replace the word embedding rows (e.g. with pretrained vectors); PAD stays zero."""
        rows = np.array(matrix, dtype=self.dtype)
        if rows.shape != self.embedding.rows.shape:
            raise T.ShapeError(f"embedding matrix {rows.shape}, expected {self.embedding.rows.shape}")
        rows[PAD_ID] = 0.0
        self.embedding.rows.data[...] = rows

    # -- encoders -----------------------------------------------------------
    def _text(self, ids: np.ndarray, mask: np.ndarray, encoder: RecurrentEncoder) -> Tensor:
        seq, _ = encoder(self.embedding(ids), mask, return_sequence=True)
        if self.cfg.positional:
            seq = seq + sinusoidal_positions(ids.shape[1], self.cfg.d_model, self.dtype)
        return seq

    def encode_options(self, opt_ids: np.ndarray, opt_mask: np.ndarray) -> Tensor:
        B, N, L = opt_ids.shape
        flat = self.option_encoder(self.embedding(opt_ids.reshape(B * N, L)), opt_mask.reshape(B * N, L))
        return T.reshape(flat, (B, N, self.cfg.d_model))

    def _image(self, batch: RoundBatch) -> Tensor:
        if batch.image is None:
            raise ValueError(f"variant {self.variant.value} needs image features")
        return self.image_proj(Tensor(batch.image.astype(self.dtype, copy=False)))

    # -- fused encoding -----------------------------------------------------
    def encode(self, batch: RoundBatch, rng: np.random.Generator | None = None) -> Tensor:
        v = self.variant
        if v.uses_history and batch.h_ids is None:
            raise ValueError(f"variant {v.value} needs dialog history")
        if v is Variant.MCA_I_HCONCQ:
            ids, mask = concat_history_question(batch.h_ids, batch.h_mask, batch.q_ids, batch.q_mask)
            q = self._text(ids, mask, self.question_encoder)
            x, y = self.mca_image(q, self._image(batch), mask, None, rng)
            return self.head_image(x, y, mask, None, rng)

        q_mask = batch.q_mask
        q = self._text(batch.q_ids, q_mask, self.question_encoder)
        if v is Variant.MCA_I:
            x, y = self.mca_image(q, self._image(batch), q_mask, None, rng)
            return self.head_image(x, y, q_mask, None, rng)

        h_mask = batch.h_mask
        h = self._text(batch.h_ids, h_mask, self.history_encoder)
        if v is Variant.MCA_H:
            x, y = self.mca_history(q, h, q_mask, h_mask, rng)
            return self.head_history(x, y, q_mask, h_mask, rng)
        if v is Variant.MCA_I_HGUIDEDQ:
            _, q_enriched = self.mca_guide(h, q, h_mask, q_mask, rng)
            x, y = self.mca_image(q_enriched, self._image(batch), q_mask, None, rng)
            return self.head_image(x, y, q_mask, None, rng)
        if v is Variant.MCA_I_VGH:
            img = self._image(batch)
            _, grounded = self.mca_ground(img, h, None, h_mask, rng)
            xh, yh = self.mca_history(q, grounded, q_mask, h_mask, rng)
            z_hist = self.head_history(xh, yh, q_mask, h_mask, rng)
            xi, yi = self.mca_image(q, img, q_mask, None, rng)
            z_img = self.head_image(xi, yi, q_mask, None, rng)
            return self.out_proj(T.concat([z_img, z_hist], axis=-1))
        # MCA-I-H
        xi, yi = self.mca_image(q, self._image(batch), q_mask, None, rng)
        z_img = self.head_image(xi, yi, q_mask, None, rng)
        xh, yh = self.mca_history(q, h, q_mask, h_mask, rng)
        z_hist = self.head_history(xh, yh, q_mask, h_mask, rng)
        return self.out_proj(T.concat([z_img, z_hist], axis=-1))

    def forward(self, batch: RoundBatch, rng: np.random.Generator | None = None) -> Tensor:
        """Candidate logits (B, N)."""
        z = self.encode(batch, rng if self.training else None)
        return score(z, self.encode_options(batch.opt_ids, batch.opt_mask))

    __call__ = forward

    def probabilities(self, batch: RoundBatch, rng: np.random.Generator | None = None) -> Tensor:
        return T.softmax(self.forward(batch, rng), axis=-1)


def concat_history_question(h_ids, h_mask, q_ids, q_mask, max_len: int = MAX_CONCAT_LEN):
    """Row-wise [history ; question] keeping the most recent ``max_len`` tokens."""
    rows = []
    for hi, hm, qi, qm in zip(h_ids, h_mask, q_ids, q_mask):
        seq = np.concatenate([hi[hm], qi[qm]])
        rows.append(seq[-max_len:])
    width = max(len(r) for r in rows)
    ids = np.zeros((len(rows), width), dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
    return ids, ids != 0


def encode_candidates(options: list[list[int]], encoder: RecurrentEncoder, table: EmbeddingTable) -> Tensor:
    """Final LSTM state per option: an (N, hidden) matrix."""
    if not options:
        raise ValueError("empty option list")
    ids, mask = pad_ids([o[:MAX_OPTION_LEN] for o in options])
    return encoder(table(ids), mask)


def score(z: Tensor, candidates: Tensor) -> Tensor:
    """Dot-product logits <z, candidate_i>.  Accepts (d,)/(N, d) or batched (B, d)/(B, N, d)."""
    if z.shape[-1] != candidates.shape[-1]:
        raise T.ShapeError(f"fused dim {z.shape[-1]} does not match candidate dim {candidates.shape[-1]}")
    if z.ndim == 1:
        return T.reshape(T.matmul(candidates, T.reshape(z, (-1, 1))), (candidates.shape[0],))
    B, d = z.shape
    return T.reshape(T.matmul(candidates, T.reshape(z, (B, d, 1))), (B, candidates.shape[1]))


# -- losses ------------------------------------------------------------------
def _log_probs(probs: Tensor, weights: np.ndarray) -> Tensor:
    low = (probs.data < PROB_FLOOR) & (weights > 0)
    if low.any():
        log.warning("probability below %g at %d positive-weight position(s); clamped", PROB_FLOOR, int(low.sum()))
    return T.log(T.clamp_min(probs, PROB_FLOOR))


def _weighted(logp: Tensor, weights: np.ndarray, n: int) -> Tensor:
    per_round = T.tsum(logp * weights.astype(logp.dtype), axis=-1) * (-1.0 / n)
    return T.mean(per_round) if per_round.ndim else per_round


def one_hot(gt_index, n: int) -> np.ndarray:
    gt = np.atleast_1d(np.asarray(gt_index, dtype=np.int64))
    if (gt < 0).any() or (gt >= n).any():
        raise IndexError(f"gt_index {gt_index} out of range for {n} candidates")
    y = np.zeros((gt.size, n))
    y[np.arange(gt.size), gt] = 1.0
    return y if np.ndim(gt_index) else y[0]


def loss_sparse(probs: Tensor, gt_index, n: int | None = None) -> Tensor:
    """-(1/N) sum_n y_n log P_n with one-hot y; batched inputs are averaged."""
    n = n or probs.shape[-1]
    y = one_hot(gt_index, probs.shape[-1])
    return _weighted(_log_probs(probs, y), y, n)


def loss_dense(probs: Tensor, relevance, n: int | None = None) -> Tensor:
    """-(1/N) sum_n r_n log P_n with raw relevance weights r."""
    n = n or probs.shape[-1]
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.shape != probs.shape:
        raise T.ShapeError(f"relevance shape {rel.shape} does not match probabilities {probs.shape}")
    if (rel < 0).any() or (rel > 1).any():
        raise ValueError("relevance values must lie in [0, 1]")
    return _weighted(_log_probs(probs, rel), rel, n)


def loss_from_logits(logits: Tensor, weights: np.ndarray, n: int | None = None) -> Tensor:
    """Same objective computed through log-softmax, used for training."""
    n = n or logits.shape[-1]
    return _weighted(T.log_softmax(logits, axis=-1), np.asarray(weights), n)
