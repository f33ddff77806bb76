"""Retrieval metrics for candidate ranking: NDCG, MRR, R@{1,5,10}, mean rank."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.batching import DialogDataset
from .diffcore.tensor import no_grad


def rank_candidates(scores) -> np.ndarray:
    """1-based ranks by descending score; ties go to the lower original index."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise ValueError("NaN score")
    order = np.argsort(-scores, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(1, scores.shape[-1] + 1), order.shape), axis=-1)
    return ranks


def ndcg(ranks, relevance) -> float:
    """NDCG at K = number of nonzero-relevance candidates, linear gain."""
    ranks = np.asarray(ranks)
    rel = np.asarray(relevance, dtype=np.float64)
    if ranks.shape != rel.shape:
        raise ValueError(f"ranks {ranks.shape} and relevance {rel.shape} differ in length")
    if (rel < 0).any():
        raise ValueError("negative relevance")
    k = int(np.count_nonzero(rel))
    if k == 0:
        return 0.0
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    in_top = ranks <= k
    dcg = float(np.sum(rel[in_top] * discounts[ranks[in_top] - 1]))
    idcg = float(np.sum(np.sort(rel)[::-1][:k] * discounts))
    return dcg / idcg


def single_gt_metrics(gt_rank: int, num_candidates: int | None = None) -> tuple[float, int, int, int, int]:
    """(reciprocal rank, R@1, R@5, R@10, rank) for one ground-truth rank."""
    gt_rank = int(gt_rank)
    if gt_rank < 1 or (num_candidates is not None and gt_rank > num_candidates):
        raise ValueError(f"ground-truth rank {gt_rank} out of range")
    return 1.0 / gt_rank, int(gt_rank <= 1), int(gt_rank <= 5), int(gt_rank <= 10), gt_rank


@dataclass
class RankingResult:
    keys: list[tuple[int, int]] = field(default_factory=list)
    ranks: list[np.ndarray] = field(default_factory=list)
    gt_ranks: list[int] = field(default_factory=list)
    ndcg: dict[tuple[int, int], float] = field(default_factory=dict)


@dataclass
class MetricsReport:
    ndcg: float | None
    mrr: float
    r1: float
    r5: float
    r10: float
    mean_rank: float
    num_rounds: int
    num_ndcg_rounds: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        """Plain-text table: NDCG, MRR, R@1, R@5, R@10, Mean (percentages except Mean)."""
        head = ["NDCG", "MRR", "R@1", "R@5", "R@10", "Mean"]
        vals = ["-" if self.ndcg is None else f"{100 * self.ndcg:.2f}",
                f"{100 * self.mrr:.2f}", f"{100 * self.r1:.2f}", f"{100 * self.r5:.2f}",
                f"{100 * self.r10:.2f}", f"{self.mean_rank:.2f}"]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        fmt = lambda row: "  ".join(c.rjust(w) for c, w in zip(row, widths))  # noqa: E731
        return fmt(head) + "\n" + fmt(vals)


def summarize(result: RankingResult) -> MetricsReport:
    if not result.gt_ranks:
        raise ValueError("no evaluable rounds")
    terms = np.array([single_gt_metrics(r) for r in result.gt_ranks], dtype=np.float64)
    mrr, r1, r5, r10, mean_rank = terms.mean(axis=0)
    nd = list(result.ndcg.values())
    return MetricsReport(float(np.mean(nd)) if nd else None, float(mrr), float(r1), float(r5), float(r10),
                         float(mean_rank), len(result.gt_ranks), len(nd))


def rank_dataset(model, dataset: DialogDataset, dialogs_per_batch: int = 8) -> RankingResult:
    """Score every evaluation round of ``dataset`` with a frozen model."""
    was_training = model.training
    model.eval()
    result = RankingResult()
    try:
        with no_grad():
            for batch in dataset.dialog_batches(list(range(len(dataset))), dialogs_per_batch):
                # logits order candidates exactly like their softmax, without underflow ties
                ranks = rank_candidates(model(batch).data)
                for i, key in enumerate(batch.keys):
                    result.keys.append(key)
                    result.ranks.append(ranks[i])
                    result.gt_ranks.append(int(ranks[i, batch.gt_index[i]]))
                    if batch.relevance is not None and not np.isnan(batch.relevance[i]).any():
                        result.ndcg[key] = ndcg(ranks[i], batch.relevance[i])
    finally:
        model.train(was_training)
    return result


def evaluate(model, dataset: DialogDataset, dialogs_per_batch: int = 8) -> MetricsReport:
    """Single-GT metrics over all evaluated rounds; NDCG over annotated rounds only."""
    return summarize(rank_dataset(model, dataset, dialogs_per_batch))


def evaluate_scores(scores, gt_index, relevance=None) -> MetricsReport:
    """Metrics straight from a (rounds, N) score matrix."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    ranks = rank_candidates(scores)
    res = RankingResult()
    for i, gt in enumerate(np.asarray(gt_index)):
        res.keys.append((0, i))
        res.ranks.append(ranks[i])
        res.gt_ranks.append(int(ranks[i, gt]))
        if relevance is not None and not math.isnan(float(np.sum(relevance[i]))):
            res.ndcg[(0, i)] = ndcg(ranks[i], relevance[i])
    return summarize(res)
