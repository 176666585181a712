"""Retrieval and detection metrics over per-query ranking outcomes.

Means use compensated summation so reduction order never matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RankingOutcome:
    query_id: str
    true_bucket_rank: int | None
    top1_score: float
    has_true_duplicate: bool


def mrr(outcomes) -> float:
    """Mean reciprocal rank over duplicate queries; a missing rank counts 0."""
    reciprocal = [1.0 / o.true_bucket_rank if o.true_bucket_rank else 0.0
                  for o in outcomes if o.has_true_duplicate]
    if not reciprocal:
        raise ValueError("no duplicate queries")
    return math.fsum(reciprocal) / len(reciprocal)


def recall_at_k(outcomes, k: int) -> float:
    """Fraction of duplicate queries whose true bucket ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits, total = 0, 0
    for o in outcomes:
        if not o.has_true_duplicate:
            continue
        total += 1
        if o.true_bucket_rank is not None and o.true_bucket_rank <= k:
            hits += 1
    if total == 0:
        raise ValueError("no duplicate queries")
    return hits / total


def roc_auc(labels, scores) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores count half."""
    labels = list(labels)
    scores = list(scores)
    if len(labels) != len(scores):
        raise ValueError("labels and scores differ in length")
    n_pos = sum(1 for l in labels if l)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    rank_sum_pos = math.fsum(r for r, l in zip(ranks, labels) if l)
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
