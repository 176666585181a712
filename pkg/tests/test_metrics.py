import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracedup.metrics import RankingOutcome, mrr, recall_at_k, roc_auc


def outcomes_from_ranks(ranks):
    return [RankingOutcome(query_id=f"q{i}", true_bucket_rank=r,
                           top1_score=0.0, has_true_duplicate=True)
            for i, r in enumerate(ranks)]


def test_mrr_reference():
    assert mrr(outcomes_from_ranks([1, 2, 4])) == pytest.approx((1 + 0.5 + 0.25) / 3)


def test_mrr_all_first():
    assert mrr(outcomes_from_ranks([1, 1, 1])) == 1.0


def test_mrr_missing_rank_counts_zero():
    outcomes = outcomes_from_ranks([1]) + [
        RankingOutcome("q9", None, 0.0, has_true_duplicate=True)]
    assert mrr(outcomes) == pytest.approx(0.5)


def test_mrr_requires_duplicate_queries():
    with pytest.raises(ValueError):
        mrr([RankingOutcome("q", None, 0.0, has_true_duplicate=False)])


def test_mrr_matches_oracle_on_random_instances():
    rng = random.Random(1)
    for _ in range(1000):
        ranks = [rng.randint(1, 50) if rng.random() > 0.1 else None
                 for _ in range(rng.randint(1, 40))]
        got = mrr(outcomes_from_ranks(ranks))
        expected = sum((1.0 / r if r else 0.0) for r in ranks) / len(ranks)
        assert got == pytest.approx(expected, abs=1e-12)


def test_recall_reference():
    assert recall_at_k(outcomes_from_ranks([1, 3]), 1) == 0.5
    assert recall_at_k(outcomes_from_ranks([1, 3]), 3) == 1.0
    with pytest.raises(ValueError):
        recall_at_k(outcomes_from_ranks([1]), 0)


def test_recall_matches_oracle_on_random_instances():
    rng = random.Random(2)
    for _ in range(1000):
        ranks = [rng.randint(1, 20) if rng.random() > 0.2 else None
                 for _ in range(rng.randint(1, 30))]
        k = rng.randint(1, 15)
        got = recall_at_k(outcomes_from_ranks(ranks), k)
        expected = sum(1 for r in ranks if r is not None and r <= k) / len(ranks)
        assert got == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=30), min_size=1, max_size=40))
def test_recall_monotone_in_k(ranks):
    outcomes = outcomes_from_ranks(ranks)
    values = [recall_at_k(outcomes, k) for k in range(1, 31)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert recall_at_k(outcomes, 1) <= mrr(outcomes) <= 1.0


def test_auc_reference():
    labels = [1, 1, 0, 0]
    scores = [0.9, 0.8, 0.7, 0.85]
    assert roc_auc(labels, scores) == pytest.approx(0.75)


def test_auc_perfect_separation():
    assert roc_auc([1, 1, 0, 0], [4.0, 3.0, 2.0, 1.0]) == 1.0


def test_auc_all_ties_half():
    assert roc_auc([1, 0, 1, 0], [0.5, 0.5, 0.5, 0.5]) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc([1, 1], [0.1, 0.2])


def pair_counting_auc(labels, scores):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_matches_pair_counting_oracle():
    rng = random.Random(3)
    for _ in range(1000):
        n = rng.randint(2, 40)
        labels = [rng.random() < 0.5 for _ in range(n)]
        if all(labels) or not any(labels):
            labels[0] = not labels[0]
        # quantized scores force ties through the tie-handling path
        scores = [round(rng.random(), 1) for _ in range(n)]
        assert roc_auc(labels, scores) == pytest.approx(
            pair_counting_auc(labels, scores), abs=1e-12)
