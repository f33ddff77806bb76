"""Two-phase curriculum training: sparse ground truth, then dense relevance."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data.batching import DialogDataset
from .data.corpus import DialogCorpus
from .metrics import evaluate
from .model import DialogModel, loss_from_logits, one_hot

log = logging.getLogger(__name__)

SPARSE, DENSE = "sparse", "dense"
_DEFAULT_LR = {SPARSE: 5e-4, DENSE: 1e-4}
_DEFAULT_EPOCHS = {SPARSE: 12, DENSE: 15}
_DEFAULT_PATIENCE = {SPARSE: 0, DENSE: 5}   # 0 disables early stopping


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: str = SPARSE
    lr: float | None = None
    epochs: int | None = None
    dialogs_per_batch: int = 8
    dropout: float = 0.2
    seed: int = 0
    decay_epochs: tuple[int, ...] = (7, 10)
    decay_factor: float = 0.1
    plateau_factor: float = 0.2
    plateau_patience: int = 2
    plateau_threshold: float = 1e-4
    early_stop_patience: int | None = None
    clip_norm: float | None = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.phase not in (SPARSE, DENSE):
            raise ValueError(f"phase must be '{SPARSE}' or '{DENSE}', got {self.phase!r}")
        if self.lr is None:
            self.lr = _DEFAULT_LR[self.phase]
        if self.epochs is None:
            self.epochs = _DEFAULT_EPOCHS[self.phase]
        if self.early_stop_patience is None:
            self.early_stop_patience = _DEFAULT_PATIENCE[self.phase]
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.decay_epochs = tuple(self.decay_epochs)


def lr_at(epoch: int, phase: str = SPARSE, base_lr: float | None = None, ndcg_history=(),
          cfg: TrainConfig | None = None) -> float:
    """Learning rate for ``epoch`` (0-based).

    Sparse: step decay by ``decay_factor`` at each of ``decay_epochs``.
    Dense: replay the plateau rule over the tracked NDCG of epochs before
    ``epoch``; every ``plateau_patience`` consecutive epochs without an
    improvement above ``plateau_threshold`` multiply the rate by
    ``plateau_factor``.
    """
    cfg = cfg or TrainConfig(phase=phase)
    lr = _DEFAULT_LR[phase] if base_lr is None else base_lr
    if phase == SPARSE:
        return lr * cfg.decay_factor ** sum(epoch >= m for m in cfg.decay_epochs)
    best, bad = -math.inf, 0
    for value in list(ndcg_history)[:epoch]:
        if value is not None and value > best + cfg.plateau_threshold:
            best, bad = value, 0
        else:
            bad += 1
            if bad >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                bad = 0
    return lr


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict[str, np.ndarray], state: OptimizerState, lr: float) -> dict:
    """Bias-corrected Adam update of ``params`` (name -> Tensor) in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def split_dialogs(corpus: DialogCorpus, seed: int = 0, val_fraction: float = 0.1):
    """Deterministic train/val split of dialogs by a seeded hash of the image id."""
    train, val = [], []
    for d in corpus.dialogs:
        h = int.from_bytes(hashlib.blake2b(f"{seed}:{d.image_id}".encode(), digest_size=8).digest(), "little")
        (val if (h % 10_000) < val_fraction * 10_000 else train).append(d)
    mk = lambda ds: DialogCorpus(corpus.questions, corpus.answers, ds)  # noqa: E731
    return mk(train), mk(val)


def set_dropout(model: DialogModel, p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {p}")
    model.cfg.dropout = p
    for m in model.modules():
        if hasattr(m, "p"):
            m.p = p


@dataclass
class Checkpoint:
    model_state: dict[str, np.ndarray]
    optimizer: OptimizerState
    epoch: int
    best_ndcg: float | None
    best_epoch: int
    phase: str
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None
    tracked: str = "ndcg"

    def meta(self) -> dict:
        return {"epoch": self.epoch, "best_ndcg": self.best_ndcg, "best_epoch": self.best_epoch,
                "phase": self.phase, "history": self.history, "rng_state": self.rng_state,
                "tracked": self.tracked, "adam": {"step": self.optimizer.step, "beta1": self.optimizer.beta1,
                                                  "beta2": self.optimizer.beta2, "eps": self.optimizer.eps}}

    def save(self, path: str | Path, model: DialogModel) -> None:
        """Write with ``model``'s config; parameters come from this checkpoint."""
        live = model.state_dict()
        snapshot = {k: v.copy() for k, v in live.items()}
        model.load_state_dict(self.model_state)
        extra = {f"adam.m/{k}": v for k, v in self.optimizer.m.items()}
        extra.update({f"adam.v/{k}": v for k, v in self.optimizer.v.items()})
        try:
            save_checkpoint(path, model, self.meta(), extra)
        finally:
            model.load_state_dict(snapshot)

    @classmethod
    def load(cls, path: str | Path) -> tuple[Checkpoint, DialogModel]:
        model, meta, extra = load_checkpoint(path)
        adam = meta.get("adam", {})
        opt = OptimizerState(
            m={k[len("adam.m/"):]: v for k, v in extra.items() if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: v for k, v in extra.items() if k.startswith("adam.v/")},
            step=adam.get("step", 0), beta1=adam.get("beta1", 0.9), beta2=adam.get("beta2", 0.999),
            eps=adam.get("eps", 1e-8))
        ck = cls(model.state_dict(), opt, meta.get("epoch", -1), meta.get("best_ndcg"), meta.get("best_epoch", -1),
                 meta.get("phase", SPARSE), meta.get("history", []), meta.get("rng_state"),
                 meta.get("tracked", "ndcg"))
        return ck, model


def _copy_state(model: DialogModel) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_dict().items()}


def _tracked_metric(model, val_ds: DialogDataset | None, dialogs_per_batch: int):
    if val_ds is None or len(val_ds) == 0:
        return None, None, None
    report = evaluate(model, val_ds, dialogs_per_batch)
    # without dense annotations on the validation split, track MRR instead
    return (report.ndcg if report.ndcg is not None else report.mrr), report.ndcg, report


def fit(model: DialogModel, train_ds: DialogDataset, cfg: TrainConfig, val_ds: DialogDataset | None = None,
        out_dir: str | Path | None = None, resume: bool = False) -> Checkpoint:
    """Run one phase and leave ``model`` holding the best tracked parameters.

    Checkpoints ``last.ckpt`` and ``best.ckpt`` plus ``train_log.jsonl`` are
    written to ``out_dir`` when given; ``resume`` continues from them.
    """
    dense = cfg.phase == DENSE
    if dense and not train_ds.dense:
        raise ValueError("dense fine-tuning needs annotated rounds")
    if not train_ds.round_keys(annotated_only=dense):
        raise ValueError("no training rounds")
    set_dropout(model, cfg.dropout)
    _, drop_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    drop_rng, data_rng = np.random.default_rng(drop_seq), np.random.default_rng(data_seq)
    opt = OptimizerState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    params = dict(model.named_parameters())
    history: list[dict] = []
    best_metric, best_ndcg, best_epoch = -math.inf, None, -1
    best_state = _copy_state(model)
    best_opt = copy.deepcopy(opt)
    start = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None:
            raise ValueError("resume needs out_dir")
        last, _ = Checkpoint.load(out / "last.ckpt")
        model.load_state_dict(last.model_state)
        opt = last.optimizer
        history = list(last.history)
        drop_rng.bit_generator.state = last.rng_state["dropout"]
        data_rng.bit_generator.state = last.rng_state["data"]
        start = last.epoch + 1
        best, _ = Checkpoint.load(out / "best.ckpt")
        best_state, best_opt, best_epoch, best_ndcg = best.model_state, best.optimizer, best.best_epoch, best.best_ndcg
        tracked = [h["tracked"] for h in history if h.get("tracked") is not None]
        best_metric = max(tracked) if tracked else -math.inf

    tracked_name = "ndcg"
    stale = 0
    for epoch in range(start, cfg.epochs):
        if dense:
            lr = lr_at(epoch, DENSE, cfg.lr, [h["tracked"] for h in history], cfg)
        else:
            lr = lr_at(epoch, SPARSE, cfg.lr, cfg=cfg)
        model.train()
        order = [int(i) for i in data_rng.permutation(len(train_ds))]
        total, count = 0.0, 0
        for batch in train_ds.dialog_batches(order, cfg.dialogs_per_batch, annotated_only=dense):
            model.zero_grad()
            logits = model(batch, drop_rng)
            n = batch.num_options
            weights = batch.relevance if dense else one_hot(batch.gt_index, n)
            loss = loss_from_logits(logits, weights)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}")
            loss.backward()
            grads = {k: p.grad for k, p in params.items()}
            if cfg.clip_norm is not None:
                clip_grad_norm(grads, cfg.clip_norm)
            adam_step(params, grads, opt, lr)
            total += value * len(batch)
            count += len(batch)
        metric, val_ndcg, report = _tracked_metric(model, val_ds, cfg.dialogs_per_batch)
        if report is not None and report.ndcg is None:
            tracked_name = "mrr"
        record = {"epoch": epoch, "phase": cfg.phase, "loss": total / max(count, 1), "val_ndcg": val_ndcg,
                  "lr": lr, "tracked": metric}
        if report is not None:
            record["val_mrr"] = report.mrr
            record["val_r1"] = report.r1
        history.append(record)
        log.info("epoch %d %s loss=%.6f val_ndcg=%s lr=%.2e", epoch, cfg.phase, record["loss"], val_ndcg, lr)

        improved = metric is None or metric > best_metric + (cfg.plateau_threshold if dense else 0.0)
        if improved:
            best_metric = metric if metric is not None else best_metric
            best_ndcg, best_epoch = val_ndcg, epoch
            best_state, best_opt = _copy_state(model), copy.deepcopy(opt)
            stale = 0
        else:
            stale += 1
        rng_state = {"dropout": drop_rng.bit_generator.state, "data": data_rng.bit_generator.state}
        if out is not None:
            with open(out / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps({k: record[k] for k in ("epoch", "phase", "loss", "val_ndcg", "lr")}) + "\n")
            Checkpoint(_copy_state(model), opt, epoch, best_ndcg, best_epoch, cfg.phase, history, rng_state,
                       tracked_name).save(out / "last.ckpt", model)
            Checkpoint(best_state, best_opt, epoch, best_ndcg, best_epoch, cfg.phase, history, rng_state,
                       tracked_name).save(out / "best.ckpt", model)
        if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
            log.info("early stop after epoch %d", epoch)
            break

    model.load_state_dict(best_state)
    return Checkpoint(best_state, best_opt, best_epoch, best_ndcg, best_epoch, cfg.phase, history, None, tracked_name)


def train_sparse(model: DialogModel, train_ds: DialogDataset, cfg: TrainConfig | None = None,
                 val_ds: DialogDataset | None = None, out_dir=None, resume: bool = False) -> Checkpoint:
    """Sparse phase: cross entropy on the single ground-truth answer."""
    cfg = cfg or TrainConfig(phase=SPARSE)
    if cfg.phase != SPARSE:
        raise ValueError("train_sparse needs a sparse-phase TrainConfig")
    return fit(model, train_ds, cfg, val_ds, out_dir, resume)


def finetune_dense(model: DialogModel, train_ds: DialogDataset, cfg: TrainConfig | None = None,
                   val_ds: DialogDataset | None = None, out_dir=None, resume: bool = False) -> Checkpoint:
    """Dense phase: relevance-weighted cross entropy on annotated rounds only."""
    cfg = cfg or TrainConfig(phase=DENSE)
    if cfg.phase != DENSE:
        raise ValueError("finetune_dense needs a dense-phase TrainConfig")
    return fit(model, train_ds, cfg, val_ds, out_dir, resume)
