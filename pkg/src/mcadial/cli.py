"""Batch command line: train, finetune, evaluate, audit, phenomena, gen-synthetic.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    DialogDataset, FeatureFormatError, dense_for, SchemaError, SyntheticSpec, Vocabulary, filter_subset, gen_synthetic,
    load_corpus, load_dense, load_features, load_subset_list, write_corpus, write_dense, write_features,
)
from .diffcore.layers import load_word_vectors
from .metrics import evaluate
from .model import DialogModel, ModelConfig, Variant
from .tools import ParseError, correct_gt_relevance, load_parses, phenomena_report, relevance_stats
from .train import DENSE, SPARSE, TrainConfig, TrainingDiverged, finetune_dense, split_dialogs, train_sparse

log = logging.getLogger("mcadial")

OUT_ENV = "MCADIAL_OUT"
DEFAULT_OUT = "runs"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    variant: str = Variant.MCA_I_H.value
    num_layers: int = 6
    num_heads: int = 8
    d_model: int = 512
    d_ff: int | None = None
    dropout: float = 0.2
    positional: bool = False
    embed_dim: int = 300
    lr: float | None = None
    epochs: int | None = None
    dialogs_per_batch: int = 8
    early_stop_patience: int | None = None
    clip_norm: float | None = 5.0
    corpus: str | None = None
    features: str | None = None
    dense: str | None = None
    word_vectors: str | None = None
    subset: str | None = None
    history: str | None = None
    checkpoint: str | None = None
    val_corpus: str | None = None
    val_dense: str | None = None
    val_fraction: float = 0.1
    include_caption: bool = True
    min_count: int = 1
    seed: int = 0
    out_dir: str | None = None

    def model_config(self, vocab: Vocabulary, feature_dim: int) -> ModelConfig:
        return ModelConfig(variant=self.variant, vocab_size=len(vocab), embed_dim=self.embed_dim,
                           num_layers=self.num_layers, num_heads=self.num_heads, d_model=self.d_model,
                           d_ff=self.d_ff, dropout=self.dropout, positional=self.positional,
                           feature_dim=feature_dim, seed=self.seed, vocab=list(vocab.itos[2:]))

    def train_config(self, phase: str) -> TrainConfig:
        return TrainConfig(phase=phase, lr=self.lr, epochs=self.epochs, dialogs_per_batch=self.dialogs_per_batch,
                           dropout=self.dropout, seed=self.seed, early_stop_patience=self.early_stop_patience,
                           clip_norm=self.clip_norm)


_TYPES = {"int": (int,), "float": (int, float), "bool": (bool,), "str": (str,)}


def _field_kinds() -> dict[str, tuple[str, bool]]:
    out = {}
    for f in fields(RunConfig):
        t = str(f.type)
        kind = next(k for k in ("bool", "int", "float", "str") if t.startswith(k))
        out[f.name] = (kind, "None" in t)
    return out


FIELD_KINDS = _field_kinds()


def _check_value(key: str, value):
    if key not in FIELD_KINDS:
        raise UsageError(f"unknown config key {key!r}")
    kind, nullable = FIELD_KINDS[key]
    if value is None:
        if not nullable:
            raise UsageError(f"config key {key!r} may not be null")
        return None
    ok = isinstance(value, _TYPES[kind]) and not (kind != "bool" and isinstance(value, bool))
    if not ok:
        raise UsageError(f"config key {key!r} expects {kind}, got {type(value).__name__} {value!r}")
    return float(value) if kind == "float" else value


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """File values (flat JSON object) overridden by explicit flag values."""
    values = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8") or "{}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config {path}: {e}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config {path}: top level must be an object")
        values.update({k: _check_value(k, v) for k, v in raw.items()})
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _check_value(k, v)
    cfg = RunConfig(**values)
    try:
        Variant.parse(cfg.variant)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    snapshot = {**asdict(cfg), "out_dir": str(out)}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")
    log.info("%s: resolved config written to %s", command, out / "config.json")


def _require_paths(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("corpus", "features", "dense", "word_vectors", "subset", "history", "checkpoint",
                      "val_corpus", "val_dense") and v is not None and not Path(v).exists():
            raise UsageError(f"--{f.name.replace('_', '-')}: {v} does not exist")


def _check_variant_inputs(cfg: RunConfig, variant: Variant) -> None:
    if cfg.history is not None and not variant.uses_history:
        log.warning("--history ignored: %s does not use dialog history", variant.value)
    if variant.uses_image and cfg.features is None:
        raise UsageError(f"{variant.value} needs --features")


def _dataset(cfg: RunConfig, corpus, vocab, features, dense, variant: Variant) -> DialogDataset:
    history = load_corpus(cfg.history) if cfg.history is not None and variant.uses_history else None
    return DialogDataset(corpus, vocab, features, dense, cfg.include_caption, history_corpus=history)


def _load_inputs(cfg: RunConfig, feature_rows=None, feature_dim=None):
    corpus = load_corpus(cfg.corpus)
    features = load_features(cfg.features, feature_rows, feature_dim) if cfg.features else None
    dense = load_dense(cfg.dense) if cfg.dense else None
    return corpus, features, dense


def _split(cfg: RunConfig, corpus, dense):
    if cfg.val_corpus is not None:
        val = load_corpus(cfg.val_corpus)
        return corpus, dense, val, load_dense(cfg.val_dense) if cfg.val_dense else None
    if cfg.val_fraction <= 0:
        return corpus, dense, None, None
    train, val = split_dialogs(corpus, cfg.seed, cfg.val_fraction)
    if not val.dialogs:
        return corpus, dense, None, None
    return train, dense_for(dense, train), val, dense_for(dense, val)


def cmd_train(cfg: RunConfig) -> int:
    _require_paths(cfg, "corpus")
    variant = Variant.parse(cfg.variant)
    _check_variant_inputs(cfg, variant)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "train")
    corpus, features, dense = _load_inputs(cfg)
    train, train_dense, val, val_dense = _split(cfg, corpus, dense)
    vocab = Vocabulary.from_corpus(train, cfg.min_count)
    feature_dim = features.dim if features is not None else 1
    model = DialogModel(cfg.model_config(vocab, feature_dim))
    if cfg.word_vectors:
        rng = np.random.default_rng(cfg.seed)
        model.set_embeddings(load_word_vectors(cfg.word_vectors, vocab.stoi, cfg.embed_dim, rng))
    train_ds = _dataset(cfg, train, vocab, features, train_dense, variant)
    val_ds = _dataset(cfg, val, vocab, features, val_dense, variant) if val is not None else None
    ck = train_sparse(model, train_ds, cfg.train_config(SPARSE), val_ds, out)
    _report_training(ck, out)
    return 0


def cmd_finetune(cfg: RunConfig) -> int:
    _require_paths(cfg, "corpus", "dense", "checkpoint")
    model, _, _ = load_checkpoint(cfg.checkpoint)
    variant = model.variant
    if Variant.parse(cfg.variant) is not variant:
        log.info("using the checkpoint's variant %s", variant.value)
    _check_variant_inputs(cfg, variant)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "finetune")
    corpus, features, dense = _load_inputs(cfg, None, model.cfg.feature_dim if variant.uses_image else None)
    train, train_dense, val, val_dense = _split(cfg, corpus, dense)
    vocab = Vocabulary(model.cfg.vocab)
    train_ds = _dataset(cfg, train, vocab, features, train_dense, variant)
    val_ds = _dataset(cfg, val, vocab, features, val_dense, variant) if val is not None else None
    ck = finetune_dense(model, train_ds, cfg.train_config(DENSE), val_ds, out)
    _report_training(ck, out)
    return 0


def _report_training(ck, out: Path) -> None:
    best = "n/a" if ck.best_ndcg is None else f"{ck.best_ndcg:.5f}"
    print(f"best epoch {ck.best_epoch}, tracked val NDCG {best}; checkpoint {out / 'best.ckpt'}")


def cmd_evaluate(cfg: RunConfig) -> int:
    _require_paths(cfg, "corpus", "checkpoint")
    model, _, _ = load_checkpoint(cfg.checkpoint)
    variant = model.variant
    _check_variant_inputs(cfg, variant)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "evaluate")
    corpus, features, dense = _load_inputs(cfg, None, model.cfg.feature_dim if variant.uses_image else None)
    unknown = []
    if cfg.subset:
        corpus, dense, unknown = filter_subset(corpus, dense, load_subset_list(cfg.subset))
        if not corpus.dialogs:
            raise DataError("no subset entry matches the corpus")
    ds = _dataset(cfg, corpus, Vocabulary(model.cfg.vocab), features, dense, variant)
    report = evaluate(model, ds, cfg.dialogs_per_batch)
    payload = {"variant": variant.value, "include_caption": cfg.include_caption, **report.to_dict(),
               "unknown_subset_entries": [list(p) for p in unknown]}
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())
    return 0


def cmd_audit(args) -> int:
    if not Path(args.corpus).exists() or not Path(args.dense).exists():
        raise UsageError("--corpus and --dense must exist")
    corpus, dense = load_corpus(args.corpus), load_dense(args.dense)
    if args.action == "stats":
        hist = relevance_stats(dense, corpus)
        print(json.dumps(hist.to_dict(), indent=2) if args.json else hist.table())
        return 0
    if args.output is None:
        raise UsageError("audit correct needs --output")
    if Path(args.output).resolve() == Path(args.dense).resolve():
        raise UsageError("--output must differ from --dense; inputs are never modified")
    fix = correct_gt_relevance(dense, corpus)
    write_dense(fix.dense, args.output)
    sidecar = Path(str(args.output) + ".audit.json")
    fix.write_audit(sidecar)
    print(f"modified {fix.modified_count} ground-truth entries; audit in {sidecar}")
    return 0


def cmd_phenomena(args) -> int:
    if not Path(args.corpus).exists():
        raise UsageError(f"--corpus: {args.corpus} does not exist")
    corpus = load_corpus(args.corpus)
    parses = load_parses(args.parses) if args.parses else None
    try:
        report = phenomena_report(corpus, parses)
    except ValueError as e:
        raise DataError(str(e)) from None
    print(report.to_json() if args.json else report.table())
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(n_dialogs=args.n_dialogs, vocab=args.vocab, num_options=args.num_options,
                         feature_dim=args.feature_dim, n_boxes=args.boxes,
                         history_dependent=not args.image_grounded, seed=args.seed, group_size=args.group_size,
                         dense_rounds_per_dialog=args.dense_rounds, gt_noise=args.gt_noise)
    try:
        spec.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    corpus, features, dense = gen_synthetic(spec)
    write_corpus(corpus, out / "corpus.json")
    write_features(features, out / "features.bin")
    write_dense(dense, out / "dense.json")
    (out / "synthetic.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.dialogs)} dialogs to {out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flat RunConfig keys")
    for name, (kind, _) in FIELD_KINDS.items():
        flag = "--" + name.replace("_", "-")
        if kind == "bool":
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=name, default=None, type={"int": int, "float": float, "str": str}[kind])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcadial", description="Modular co-attention visual dialog answer ranking")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in (("train", "sparse ground-truth training"), ("finetune", "dense relevance fine-tuning"),
                        ("evaluate", "ranking metrics for a checkpoint")):
        p = sub.add_parser(name, help=help_)
        _add_run_flags(p)
        if name == "evaluate":
            p.add_argument("--no-caption", dest="include_caption", action="store_false", default=None,
                           help="drop the caption from the history")
    a = sub.add_parser("audit", help="dense annotation statistics or ground-truth correction")
    a.add_argument("action", choices=["stats", "correct"])
    a.add_argument("--corpus", required=True)
    a.add_argument("--dense", required=True)
    a.add_argument("--output", help="corrected annotation file (correct only)")
    a.add_argument("--json", action="store_true")
    ph = sub.add_parser("phenomena", help="pronoun and ellipsis histograms")
    ph.add_argument("--corpus", required=True)
    ph.add_argument("--parses", help="bracketed trees, one per corpus question")
    ph.add_argument("--json", action="store_true")
    g = sub.add_parser("gen-synthetic", help="write a synthetic corpus, features and dense annotations")
    g.add_argument("--out")
    g.add_argument("--n-dialogs", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--vocab", type=int, default=48)
    g.add_argument("--num-options", type=int, default=20)
    g.add_argument("--group-size", type=int, default=4)
    g.add_argument("--feature-dim", type=int, default=32)
    g.add_argument("--boxes", type=int, default=36)
    g.add_argument("--dense-rounds", type=int, default=1)
    g.add_argument("--gt-noise", type=float, default=0.0)
    g.add_argument("--image-grounded", action="store_true", help="answers read off the image, not the history")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command is None:
            raise UsageError("a subcommand is required; see --help")
        if args.command in ("train", "finetune", "evaluate"):
            overrides = {k: getattr(args, k) for k in FIELD_KINDS}
            cfg = load_config(args.config, overrides)
            return {"train": cmd_train, "finetune": cmd_finetune, "evaluate": cmd_evaluate}[args.command](cfg)
        if args.command == "audit":
            return cmd_audit(args)
        if args.command == "phenomena":
            return cmd_phenomena(args)
        return cmd_gen_synthetic(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, SchemaError, FeatureFormatError, CheckpointError, ParseError, TrainingDiverged,
            OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
