"""Report-level aggregation of per-trace embeddings.

Four modes: max (most similar cross-report trace pair), mean, parametric
max-mean (alpha-weighted concatenation of both), and multi-head attention
pooling. The priority weight alpha lives in [0, 1] via a logistic squash of
an unconstrained parameter so it can be optimized jointly with the ranker;
the argmax pair selection is treated as a constant during differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embed import cosine_sim

MODE_MAX = "max"
MODE_MEAN = "mean"
MODE_PMM = "pmm"
MODE_ATTN = "attn"
MODES = (MODE_MAX, MODE_MEAN, MODE_PMM, MODE_ATTN)


def squash(alpha_raw: float) -> float:
    if alpha_raw >= 0:
        return 1.0 / (1.0 + math.exp(-alpha_raw))
    e = math.exp(alpha_raw)
    return e / (1.0 + e)


def squash_grad(alpha_raw: float) -> float:
    s = squash(alpha_raw)
    return s * (1.0 - s)


@dataclass
class AggregationParams:
    mode: str = MODE_PMM
    alpha_raw: float = 0.0
    heads: int = 2
    queries: np.ndarray | None = None  # (heads, dim); zero-init when absent

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown aggregation mode {self.mode!r}")

    @property
    def alpha(self) -> float:
        return squash(self.alpha_raw)

    def query_matrix(self, dim: int) -> np.ndarray:
        if self.queries is None:
            self.queries = np.zeros((self.heads, dim))
        return self.queries


def max_pair(qe: list[np.ndarray], se: list[np.ndarray]) -> tuple[int, int, float]:
    """Indices and similarity of the most similar cross-report trace pair.

    Ties break toward the lexicographically smallest (i, j).
    """
    if not qe or not se:
        raise ValueError("cannot aggregate an empty trace list")
    best = (-math.inf, 0, 0)
    for i, u in enumerate(qe):
        for j, v in enumerate(se):
            sim = cosine_sim(u, v)
            if sim > best[0]:
                best = (sim, i, j)
    return best[1], best[2], best[0]


def mean_pool(vectors: list[np.ndarray]) -> np.ndarray:
    if not vectors:
        raise ValueError("cannot aggregate an empty trace list")
    return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)


def param_max_mean(qe: list[np.ndarray], se: list[np.ndarray],
                   params: AggregationParams) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate alpha * best-pair member with (1 - alpha) * mean, per side."""
    i, j, _ = max_pair(qe, se)
    alpha = params.alpha
    f_q = np.concatenate([alpha * np.asarray(qe[i], dtype=np.float64),
                          (1.0 - alpha) * mean_pool(qe)])
    f_s = np.concatenate([alpha * np.asarray(se[j], dtype=np.float64),
                          (1.0 - alpha) * mean_pool(se)])
    return f_q, f_s


def pmm_with_alpha_grad(qe, se, params):
    """param_max_mean plus d f_Q / d alpha_raw and d f_S / d alpha_raw."""
    i, j, _ = max_pair(qe, se)
    alpha = params.alpha
    ds = squash_grad(params.alpha_raw)
    mq, ms = mean_pool(qe), mean_pool(se)
    sel_q = np.asarray(qe[i], dtype=np.float64)
    sel_s = np.asarray(se[j], dtype=np.float64)
    f_q = np.concatenate([alpha * sel_q, (1.0 - alpha) * mq])
    f_s = np.concatenate([alpha * sel_s, (1.0 - alpha) * ms])
    g_q = np.concatenate([sel_q, -mq]) * ds
    g_s = np.concatenate([sel_s, -ms]) * ds
    return f_q, f_s, g_q, g_s


def attention_pool(vectors: list[np.ndarray], params: AggregationParams) -> np.ndarray:
    """Per-head softmax(q . e_i) weighting, heads averaged; output keeps dim d."""
    if not vectors:
        raise ValueError("cannot aggregate an empty trace list")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    queries = params.query_matrix(stacked.shape[1])
    pooled = np.zeros(stacked.shape[1])
    for q in queries:
        logits = stacked @ q
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        pooled += weights @ stacked
    return pooled / len(queries)


def aggregate_pair(qe: list[np.ndarray], se: list[np.ndarray],
                   params: AggregationParams) -> tuple[np.ndarray, np.ndarray]:
    """Representations fed to the pairwise classifier, per the configured mode."""
    if params.mode == MODE_PMM:
        return param_max_mean(qe, se, params)
    if params.mode == MODE_MAX:
        i, j, _ = max_pair(qe, se)
        return (np.asarray(qe[i], dtype=np.float64),
                np.asarray(se[j], dtype=np.float64))
    if params.mode == MODE_MEAN:
        return mean_pool(qe), mean_pool(se)
    return attention_pool(qe, params), attention_pool(se, params)


def rep_dim(embed_dim: int, mode: str) -> int:
    """Dimension of one side's aggregated representation."""
    return 2 * embed_dim if mode == MODE_PMM else embed_dim
