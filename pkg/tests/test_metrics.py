import math

import numpy as np
import pytest

from mcadial.diffcore import Tensor
from mcadial.metrics import evaluate, evaluate_scores, ndcg, rank_candidates, single_gt_metrics


def brute_ranks(scores):
    n = len(scores)
    return [1 + sum(1 for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i))
            for i in range(n)]


def brute_ndcg(scores, rel):
    ranks = brute_ranks(scores)
    k = sum(1 for r in rel if r != 0)
    if k == 0:
        return 0.0
    by_rank = sorted(range(len(rel)), key=lambda i: ranks[i])
    dcg = sum(rel[i] / math.log2(1 + r) for r, i in enumerate(by_rank[:k], start=1))
    ideal = sorted(rel, reverse=True)
    idcg = sum(ideal[r - 1] / math.log2(1 + r) for r in range(1, k + 1))
    return dcg / idcg


def test_rank_examples():
    np.testing.assert_array_equal(rank_candidates([0.1, 0.9, 0.5]), [3, 1, 2])
    np.testing.assert_array_equal(rank_candidates([0.5, 0.5]), [1, 2])
    np.testing.assert_array_equal(rank_candidates([3.0]), [1])
    with pytest.raises(ValueError, match="NaN"):
        rank_candidates([0.1, np.nan])


def test_ndcg_examples():
    rel = [1.0, 0.5, 0.0]
    ranks = rank_candidates([0.5, 0.9, 0.1])  # order c2, c1, c3
    expected = (0.5 + 1 / math.log2(3)) / (1 + 0.5 / math.log2(3))
    assert ndcg(ranks, rel) == pytest.approx(0.85972, abs=1e-5)
    assert ndcg(ranks, rel) == pytest.approx(expected, abs=1e-12)
    assert ndcg(rank_candidates([3, 2, 1]), rel) == 1.0
    assert ndcg(ranks, [0, 0, 0]) == 0.0
    with pytest.raises(ValueError, match="negative"):
        ndcg(ranks, [1, -0.5, 0])
    with pytest.raises(ValueError, match="length"):
        ndcg(ranks, [1, 0])


def test_single_gt_examples():
    assert single_gt_metrics(1) == (1.0, 1, 1, 1, 1)
    assert single_gt_metrics(4) == (0.25, 0, 1, 1, 4)
    assert single_gt_metrics(6) == (1 / 6, 0, 0, 1, 6)
    with pytest.raises(ValueError):
        single_gt_metrics(0)
    with pytest.raises(ValueError):
        single_gt_metrics(21, 20)


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        # coarse scores force plenty of ties
        scores = rng.integers(0, 5, n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
        rel = rng.choice([0.0, 0.2, 0.5, 1.0], n) * (rng.random() < 0.9)
        gt = int(rng.integers(n))
        ranks = rank_candidates(scores)
        assert list(ranks) == brute_ranks(list(scores))
        assert abs(ndcg(ranks, rel) - brute_ndcg(list(scores), list(rel))) < 1e-9
        rep = evaluate_scores([scores], [gt], [rel])
        r = brute_ranks(list(scores))[gt]
        assert abs(rep.mrr - 1 / r) < 1e-9 and rep.mean_rank == r
        assert (rep.r1, rep.r5, rep.r10) == (float(r <= 1), float(r <= 5), float(r <= 10))


def test_report_invariants_and_no_dense():
    rng = np.random.default_rng(1)
    rep = evaluate_scores(rng.standard_normal((1000, 20)), rng.integers(0, 20, 1000))
    assert rep.ndcg is None and rep.num_ndcg_rounds == 0
    assert 0 < rep.mrr <= 1 and rep.r1 <= rep.r5 <= rep.r10 and 1 <= rep.mean_rank <= 20
    assert abs(rep.mean_rank - 10.5) < 0.5
    assert "NDCG" in rep.table() and " - " in rep.table() + " "
    assert rep.to_dict()["num_rounds"] == 1000


def test_perfect_scores():
    gt = np.array([3, 0, 7])
    rep = evaluate_scores(np.eye(10)[gt], gt, np.eye(10)[gt])
    assert (rep.mrr, rep.r1, rep.r5, rep.r10, rep.mean_rank, rep.ndcg) == (1, 1, 1, 1, 1, 1)


class _Oracle:
    """Stand-in model that puts all its mass on the ground truth."""
    training = True

    def eval(self):
        self.training = False
        return self

    def train(self, mode=True):
        self.training = mode
        return self

    def __call__(self, batch):
        scores = np.eye(batch.num_options)[batch.gt_index] * 10.0
        if batch.relevance is not None:
            scores += np.nan_to_num(batch.relevance)
        return Tensor(scores)


def test_evaluate_dataset(tiny):
    _, _, dense, _, ds = tiny
    model = _Oracle()
    rep = evaluate(model, ds)
    assert model.training
    assert rep.num_rounds == 30 and rep.num_ndcg_rounds == len(dense)
    assert rep.mrr == 1 and rep.mean_rank == 1 and rep.ndcg == 1


def test_evaluate_without_rounds(tiny):
    from mcadial.data import filter_subset, DialogDataset
    corpus, features, _, vocab, _ = tiny
    sub, _, _ = filter_subset(corpus, None, [])
    with pytest.raises(ValueError, match="no evaluable"):
        evaluate(_Oracle(), DialogDataset(sub, vocab, features))
