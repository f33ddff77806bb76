"""Synthetic VisDial-style corpora for desk-scale experiments.

Answer tokens live in a pool split into groups of ``group_size`` mutually
equivalent tokens.  Every candidate list is a union of whole groups, one of
which contains the ground truth, so the option list alone never singles out
the answer.  Dense annotations give the ground truth relevance 1 and its
group-mates a fixed per-token relevance in {0.2, 0.4, 0.6, 0.8}.

Two regimes:

``history_dependent=True``
    Each dialog has a referent token.  The caption and every answer name it,
    questions are generic and every image is the same scene, so round ``t`` is
    decided by the token in earlier turns (the caption or round ``t-1``'s
    answer) and is at chance from question and image alone.

``history_dependent=False``
    The image holds ten object rows, each encoding an object and its answer
    token.  Round ``t`` asks about one object; the answer is read off the
    image and earlier turns carry no information about it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .corpus import ROUNDS_PER_DIALOG, DenseAnnotation, Dialog, DialogCorpus, DialogRound
from .features import FeatureStore

RELEVANCE_LEVELS = (0.2, 0.4, 0.6, 0.8)

_GENERIC_QUESTIONS = (
    "what is it ?",
    "and that one ?",
    "what about it ?",
    "which one is it ?",
    "can you tell me more about it ?",
    "what is that ?",
)


@dataclass
class SyntheticSpec:
    n_dialogs: int = 50
    vocab: int = 48
    num_options: int = 20
    feature_dim: int = 32
    n_boxes: int = 36
    history_dependent: bool = True
    seed: int = 0
    group_size: int = 4
    dense_rounds_per_dialog: int = 1
    n_objects: int = 16
    feature_noise: float = 0.1
    gt_noise: float = 0.0

    def validate(self) -> None:
        problems = []
        if self.n_dialogs < 1:
            problems.append("n_dialogs must be >= 1")
        if self.group_size < 1:
            problems.append("group_size must be >= 1")
        elif self.vocab % self.group_size or self.num_options % self.group_size:
            problems.append("vocab and num_options must be multiples of group_size")
        if self.num_options < 1 or self.vocab < self.num_options:
            problems.append("need 1 <= num_options <= vocab")
        if self.feature_dim < 1 or self.n_boxes < 1:
            problems.append("feature_dim and n_boxes must be positive")
        if not self.history_dependent and (self.n_boxes < ROUNDS_PER_DIALOG or self.n_objects < ROUNDS_PER_DIALOG):
            problems.append(f"image-grounded corpora need n_boxes and n_objects >= {ROUNDS_PER_DIALOG}")
        if not 0 <= self.dense_rounds_per_dialog <= ROUNDS_PER_DIALOG:
            problems.append(f"dense_rounds_per_dialog must be in [0, {ROUNDS_PER_DIALOG}]")
        if not 0.0 <= self.gt_noise <= 1.0:
            problems.append("gt_noise must be in [0, 1]")
        if problems:
            raise ValueError("invalid synthetic spec: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


def answer_token(i: int) -> str:
    return f"w{i:03d}"


def object_token(i: int) -> str:
    return f"obj{i:02d}"


def token_levels(spec: SyntheticSpec) -> np.ndarray:
    """Relevance each pool token receives when a group-mate is the answer."""
    rng = np.random.default_rng([spec.seed, 1])
    return rng.choice(RELEVANCE_LEVELS, size=spec.vocab)


def gen_synthetic(spec: SyntheticSpec):
    """Return ``(corpus, features, dense)``; fully determined by ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    proto_rng = np.random.default_rng([spec.seed, 2])
    answer_proto = proto_rng.standard_normal((spec.vocab, spec.feature_dim))
    object_proto = proto_rng.standard_normal((spec.n_objects, spec.feature_dim))
    levels = token_levels(spec)
    # one shared scene for every history-dependent dialog: nothing to memorise per image
    shared_scene = proto_rng.standard_normal((spec.n_boxes, spec.feature_dim))

    g = spec.group_size
    n_groups = spec.vocab // g
    groups_per_list = spec.num_options // g

    answers = [answer_token(i) for i in range(spec.vocab)]
    questions: list[str] = []
    q_index: dict[str, int] = {}

    def qid(text: str) -> int:
        if text not in q_index:
            q_index[text] = len(questions)
            questions.append(text)
        return q_index[text]

    def options_for(gt: int) -> tuple[list[int], int]:
        others = rng.choice([k for k in range(n_groups) if k != gt // g], size=groups_per_list - 1, replace=False)
        groups = [gt // g] + [int(k) for k in others]
        opts = [k * g + j for k in groups for j in range(g)]
        opts = [opts[i] for i in rng.permutation(len(opts))]
        return opts, opts.index(gt)

    dialogs = []
    features = FeatureStore(spec.n_boxes, spec.feature_dim)
    dense = []
    for i in range(spec.n_dialogs):
        image_id = i + 1
        rounds = []
        if spec.history_dependent:
            img = shared_scene.copy()
            referent = int(rng.integers(spec.vocab))
            caption = f"a picture of {answers[referent]}"
            for _ in range(ROUNDS_PER_DIALOG):
                q = _GENERIC_QUESTIONS[int(rng.integers(len(_GENERIC_QUESTIONS)))]
                opts, gt_index = options_for(referent)
                rounds.append(DialogRound(qid(q), referent, opts, gt_index))
        else:
            img = spec.feature_noise * rng.standard_normal((spec.n_boxes, spec.feature_dim))
            caption = "a picture of some things"
            objs = rng.choice(spec.n_objects, size=ROUNDS_PER_DIALOG, replace=False)
            slots = rng.choice(spec.n_boxes, size=ROUNDS_PER_DIALOG, replace=False)
            for obj, slot in zip(objs, slots):
                ans = int(rng.integers(spec.vocab))
                img[slot] += object_proto[obj] + answer_proto[ans]
                opts, gt_index = options_for(ans)
                rounds.append(DialogRound(qid(f"what is the {object_token(int(obj))} ?"), ans, opts, gt_index))
        features[image_id] = img
        dialogs.append(Dialog(image_id, caption, rounds))

        annotated = sorted(rng.choice(ROUNDS_PER_DIALOG, size=spec.dense_rounds_per_dialog, replace=False))
        for t in annotated:
            r = rounds[t]
            rel = np.zeros(spec.num_options)
            for j, opt in enumerate(r.answer_options):
                if opt // g == r.answer // g:
                    rel[j] = levels[opt]
            rel[r.gt_index] = 1.0
            if spec.gt_noise and rng.random() < spec.gt_noise:
                rel[r.gt_index] = float(rng.choice([0.0, 0.5]))
            dense.append(DenseAnnotation(image_id, int(t) + 1, rel))

    return DialogCorpus(questions, answers, dialogs), features, dense
