"""Dense-annotation statistics and ground-truth relevance correction."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.corpus import DenseAnnotation, DialogCorpus, align_dense


@dataclass
class RelevanceHistogram:
    counts: dict[float, int]           # ground-truth relevance value -> rounds
    total: int
    gt_zero_fraction: float
    value_counts: dict[float, int] = field(default_factory=dict)  # over every candidate

    @property
    def percentages(self) -> dict[float, float]:
        return {v: 100.0 * c / self.total for v, c in self.counts.items()}

    def to_dict(self) -> dict:
        pct = self.percentages
        return {"total": self.total, "gt_zero_fraction": self.gt_zero_fraction,
                "gt_relevance": [{"value": v, "count": c, "percent": pct[v]} for v, c in self.counts.items()],
                "all_values": [{"value": v, "count": c} for v, c in self.value_counts.items()]}

    def table(self) -> str:
        lines = [f"{'GT relevance':>12}  {'count':>7}  {'percent':>8}"]
        for v, p in self.percentages.items():
            lines.append(f"{v:>12g}  {self.counts[v]:>7d}  {p:>7.2f}%")
        lines.append(f"{'total':>12}  {self.total:>7d}")
        return "\n".join(lines)


def _gt_relevance(dense, corpus) -> list[tuple[DenseAnnotation, int]]:
    """Pair each annotation with its round's ground-truth index (validates alignment)."""
    align_dense(dense, corpus)
    index = corpus.dialog_index()
    return [(a, corpus.dialogs[index[a.image_id]].rounds[a.round_id - 1].gt_index) for a in dense]


def relevance_stats(dense: list[DenseAnnotation], corpus: DialogCorpus) -> RelevanceHistogram:
    """Histogram of the relevance given to each annotated round's ground truth."""
    if not dense:
        raise ValueError("no annotations")
    gt = Counter()
    values = Counter()
    for a, gi in _gt_relevance(dense, corpus):
        gt[float(a.relevance[gi])] += 1
        values.update(float(x) for x in a.relevance)
    total = sum(gt.values())
    counts = dict(sorted(gt.items(), reverse=True))
    return RelevanceHistogram(counts, total, gt.get(0.0, 0) / total, dict(sorted(values.items(), reverse=True)))


@dataclass
class Correction:
    dense: list[DenseAnnotation]
    modified_count: int
    indices: list[int]                 # positions in the annotation list that changed
    rounds: list[tuple[int, int, int, float]]  # (image_id, round_id, gt_index, old value)

    def audit(self) -> dict:
        return {"modified_count": self.modified_count, "indices": self.indices,
                "rounds": [list(r) for r in self.rounds]}

    def write_audit(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.audit(), indent=2) + "\n", encoding="utf-8")


def correct_gt_relevance(dense: list[DenseAnnotation], corpus: DialogCorpus) -> Correction:
    """Set every annotated ground truth to relevance 1; nothing else changes.

    The input annotations are not modified.
    """
    out, indices, rounds = [], [], []
    for i, (a, gi) in enumerate(_gt_relevance(dense, corpus)):
        rel = a.relevance.copy()
        old = float(rel[gi])
        if old != 1.0:
            rel[gi] = 1.0
            indices.append(i)
            rounds.append((a.image_id, a.round_id, gi, old))
        out.append(DenseAnnotation(a.image_id, a.round_id, rel))
    return Correction(out, len(indices), indices, rounds)


def gt_relevance_array(dense: list[DenseAnnotation], corpus: DialogCorpus) -> np.ndarray:
    return np.array([a.relevance[gi] for a, gi in _gt_relevance(dense, corpus)])
