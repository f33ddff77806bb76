"""VisDial v1.0-style dialog corpora and dense relevance annotations (JSON)."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ROUNDS_PER_DIALOG = 10


class SchemaError(ValueError):
    """Corpus or annotation file does not match the expected layout."""


@dataclass
class DialogRound:
    question: int
    answer: int
    answer_options: list[int]
    gt_index: int


@dataclass
class Dialog:
    image_id: int
    caption: str
    rounds: list[DialogRound]


@dataclass
class DialogCorpus:
    questions: list[str]
    answers: list[str]
    dialogs: list[Dialog]
    # (image_id, 1-based round) pairs to evaluate; None means every round
    eval_rounds: frozenset[tuple[int, int]] | None = field(default=None, compare=False)

    @property
    def num_rounds(self) -> int:
        return sum(len(d.rounds) for d in self.dialogs)

    @property
    def num_options(self) -> int:
        return len(self.dialogs[0].rounds[0].answer_options) if self.dialogs else 0

    def dialog_index(self) -> dict[int, int]:
        return {d.image_id: i for i, d in enumerate(self.dialogs)}

    def round_keys(self) -> list[tuple[int, int]]:
        """All (image_id, round_id) pairs honoured by ``eval_rounds``."""
        keys = [(d.image_id, t + 1) for d in self.dialogs for t in range(len(d.rounds))]
        if self.eval_rounds is not None:
            keys = [k for k in keys if k in self.eval_rounds]
        return keys

    def to_json(self) -> dict:
        return {"data": {
            "questions": list(self.questions),
            "answers": list(self.answers),
            "dialogs": [{
                "image_id": d.image_id,
                "caption": d.caption,
                "dialog": [{"question": r.question, "answer": r.answer,
                            "answer_options": list(r.answer_options), "gt_index": r.gt_index}
                           for r in d.rounds],
            } for d in self.dialogs],
        }}


@dataclass
class DenseAnnotation:
    image_id: int
    round_id: int
    relevance: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, DenseAnnotation) and self.image_id == other.image_id
                and self.round_id == other.round_id and np.array_equal(self.relevance, other.relevance))

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "round_id": self.round_id,
                "gt_relevance": [float(v) for v in self.relevance]}


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise SchemaError(f"{where}: {msg}")


def parse_corpus(obj: dict, num_options: int | None = None,
                 rounds_per_dialog: int | None = ROUNDS_PER_DIALOG) -> DialogCorpus:
    """Validate a decoded VisDial JSON object.  ``num_options`` defaults to the
    option count of the first round and must then hold for every round."""
    _require(isinstance(obj, dict) and isinstance(obj.get("data"), dict), "top level", "missing 'data' object")
    data = obj["data"]
    for key in ("questions", "answers", "dialogs"):
        _require(isinstance(data.get(key), list), "data", f"field '{key}' must be a list")
    questions, answers = data["questions"], data["answers"]
    dialogs = []
    for di, d in enumerate(data["dialogs"]):
        where = f"dialog {di}"
        _require(isinstance(d, dict), where, "not an object")
        for key, typ in (("image_id", int), ("caption", str), ("dialog", list)):
            _require(isinstance(d.get(key), typ), where, f"field '{key}' missing or not {typ.__name__}")
        if rounds_per_dialog is not None:
            _require(len(d["dialog"]) == rounds_per_dialog, where,
                     f"field 'dialog' has {len(d['dialog'])} rounds, expected {rounds_per_dialog}")
        rounds = []
        for ri, r in enumerate(d["dialog"]):
            rw = f"{where} round {ri + 1}"
            for key in ("question", "answer", "gt_index"):
                _require(isinstance(r.get(key), int), rw, f"field '{key}' missing or not int")
            opts = r.get("answer_options")
            _require(isinstance(opts, list) and all(isinstance(o, int) for o in opts), rw,
                     "field 'answer_options' must be a list of ints")
            if num_options is None:
                num_options = len(opts)
            _require(len(opts) == num_options, rw,
                     f"field 'answer_options' has {len(opts)} entries, expected {num_options}")
            _require(0 <= r["question"] < len(questions), rw, "field 'question' indexes outside the pool")
            _require(0 <= r["answer"] < len(answers), rw, "field 'answer' indexes outside the pool")
            _require(all(0 <= o < len(answers) for o in opts), rw,
                     "field 'answer_options' indexes outside the pool")
            _require(0 <= r["gt_index"] < len(opts), rw, "field 'gt_index' not in answer_options")
            _require(opts[r["gt_index"]] == r["answer"], rw,
                     "field 'gt_index' does not point at the round's answer")
            rounds.append(DialogRound(r["question"], r["answer"], list(opts), r["gt_index"]))
        dialogs.append(Dialog(d["image_id"], d["caption"], rounds))
    corpus = DialogCorpus(list(questions), list(answers), dialogs)
    log.info("corpus: %d dialogs, %d rounds, %d options per round",
             len(dialogs), corpus.num_rounds, corpus.num_options)
    return corpus


def load_corpus(path: str | Path, **kwargs) -> DialogCorpus:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e})") from None
    return parse_corpus(obj, **kwargs)


def write_corpus(corpus: DialogCorpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(corpus.to_json(), fh, separators=(",", ":"))


def parse_dense(obj) -> list[DenseAnnotation]:
    _require(isinstance(obj, list), "dense annotations", "top level must be a list")
    out = []
    for i, a in enumerate(obj):
        where = f"annotation {i}"
        _require(isinstance(a, dict), where, "not an object")
        _require(isinstance(a.get("image_id"), int), where, "field 'image_id' missing or not int")
        _require(isinstance(a.get("round_id"), int) and a["round_id"] >= 1, where,
                 "field 'round_id' must be a 1-based int")
        rel = a.get("gt_relevance")
        _require(isinstance(rel, list), where, "field 'gt_relevance' must be a list")
        rel = np.asarray(rel, dtype=np.float64)
        _require(bool(np.all((rel >= 0) & (rel <= 1))), where, "field 'gt_relevance' values outside [0, 1]")
        out.append(DenseAnnotation(a["image_id"], a["round_id"], rel))
    return out


def load_dense(path: str | Path) -> list[DenseAnnotation]:
    with open(path, encoding="utf-8") as fh:
        return parse_dense(json.load(fh))


def write_dense(dense: list[DenseAnnotation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([a.to_json() for a in dense], fh, separators=(",", ":"))


def align_dense(dense: list[DenseAnnotation], corpus: DialogCorpus) -> dict[tuple[int, int], DenseAnnotation]:
    """Index annotations by (image_id, round_id), checking each against the corpus."""
    index = corpus.dialog_index()
    out = {}
    for a in dense:
        if a.image_id not in index:
            raise SchemaError(f"annotation for image {a.image_id}: image not in corpus")
        dialog = corpus.dialogs[index[a.image_id]]
        if not 1 <= a.round_id <= len(dialog.rounds):
            raise SchemaError(f"annotation for image {a.image_id}: round {a.round_id} out of range")
        n = len(dialog.rounds[a.round_id - 1].answer_options)
        if len(a.relevance) != n:
            raise SchemaError(f"annotation for image {a.image_id} round {a.round_id}: "
                              f"{len(a.relevance)} relevance values for {n} options")
        out[(a.image_id, a.round_id)] = a
    return out


def dense_for(dense: list[DenseAnnotation] | None, corpus: DialogCorpus) -> list[DenseAnnotation] | None:
    """Annotations whose image belongs to ``corpus`` (e.g. after a split)."""
    if dense is None:
        return None
    ids = {d.image_id for d in corpus.dialogs}
    return [a for a in dense if a.image_id in ids]


def load_subset_list(path: str | Path) -> list[tuple[int, int]]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    _require(isinstance(obj, list), "subset list", "top level must be a list")
    pairs = []
    for i, e in enumerate(obj):
        _require(isinstance(e, dict) and isinstance(e.get("image_id"), int) and isinstance(e.get("round_id"), int),
                 f"subset entry {i}", "needs int fields 'image_id' and 'round_id'")
        pairs.append((e["image_id"], e["round_id"]))
    return pairs


def filter_subset(corpus: DialogCorpus, dense: list[DenseAnnotation] | None,
                  pairs: list[tuple[int, int]]):
    """Restrict evaluation to the listed (image_id, round_id) pairs.

    Whole dialogs are kept (earlier rounds feed the history) but only the
    listed rounds are evaluated.  Returns ``(corpus', dense', unknown)`` where
    ``unknown`` lists pairs absent from the corpus; they are also logged.
    """
    index = corpus.dialog_index()
    keep: dict[tuple[int, int], None] = {}
    unknown = []
    for image_id, round_id in pairs:
        if image_id in index and 1 <= round_id <= len(corpus.dialogs[index[image_id]].rounds):
            keep[(image_id, round_id)] = None
        else:
            unknown.append((image_id, round_id))
    for pair in unknown:
        log.warning("subset entry %s not found in corpus", pair)
    ids = {k[0] for k in keep}
    sub = DialogCorpus(corpus.questions, corpus.answers, [d for d in corpus.dialogs if d.image_id in ids],
                       eval_rounds=frozenset(keep))
    sub_dense = None if dense is None else [a for a in dense if (a.image_id, a.round_id) in keep]
    return sub, sub_dense, unknown
