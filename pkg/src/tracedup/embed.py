"""Embedding providers, contrastive training, and embedding-quality statistics.

The built-in encoder is a hashed character-n-gram bag (n = 3..5) composed by
mean pooling over a fixed random token table, followed by a trainable d x d
linear projection. It is a desk-scale stand-in for a pretrained sentence
encoder: cheap, dependency-free, deterministic, and trained through exactly
the same in-batch contrastive contract a real encoder would be. Gradients
are derived by hand (numpy, 64-bit) so they can be audited against finite
differences.
"""

from __future__ import annotations

import math
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EncoderTrainConfig:
    scale: float = 20.0  # inverse temperature
    batch_size: int = 25
    epochs: int = 1
    learning_rate: float = 2e-5
    seed: int = 0
    no_duplicate_buckets_per_batch: bool = True
    max_extra_negatives: int = 25

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


class BuiltinEncoder:
    """Hashed n-gram encoder with a trainable linear projection.

    The token table is fixed at construction (seeded); only the projection
    is updated by training. ``embed`` returns float32 vectors per the store
    contract; the float64 path is used internally for optimization.
    """

    def __init__(self, dim: int = 128, vocab_buckets: int = 32768, seed: int = 0,
                 ngram_sizes: tuple[int, ...] = (3, 4, 5)):
        self.dim = dim
        self.vocab_buckets = vocab_buckets
        self.ngram_sizes = ngram_sizes
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.table = rng.standard_normal((vocab_buckets, dim)) / math.sqrt(dim)
        self.projection = np.eye(dim)
        self._base_cache: dict[str, np.ndarray] = {}

    @property
    def name(self) -> str:
        return f"builtin-ngram(d={self.dim},V={self.vocab_buckets},seed={self.seed})"

    def ngram_buckets(self, text: str) -> Counter:
        data = text.encode("utf-8")
        counts: Counter = Counter()
        for n in self.ngram_sizes:
            for i in range(len(data) - n + 1):
                counts[zlib.crc32(data[i:i + n]) % self.vocab_buckets] += 1
        if not counts and data:
            counts[zlib.crc32(data) % self.vocab_buckets] += 1
        return counts

    def save(self, path) -> None:
        """The token table regenerates from the seed; only the projection is stored."""
        np.savez(path, dim=self.dim, vocab_buckets=self.vocab_buckets,
                 seed=self.seed, ngram_sizes=np.array(self.ngram_sizes),
                 projection=self.projection)

    @classmethod
    def load(cls, path) -> "BuiltinEncoder":
        data = np.load(path)
        encoder = cls(dim=int(data["dim"]), vocab_buckets=int(data["vocab_buckets"]),
                      seed=int(data["seed"]),
                      ngram_sizes=tuple(int(n) for n in data["ngram_sizes"]))
        encoder.projection = data["projection"]
        return encoder

    def base_vector(self, text: str) -> np.ndarray:
        """Mean-pooled table rows for the text's n-grams (pre-projection, f64)."""
        if not text:
            raise ValueError("cannot embed an empty passage")
        cached = self._base_cache.get(text)
        if cached is not None:
            return cached
        counts = self.ngram_buckets(text)
        ids = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
        weights = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        vec = weights @ self.table[ids] / weights.sum()
        self._base_cache[text] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        return (self.base_vector(text) @ self.projection.T).astype(np.float32)


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("zero vector in batch")
    an, bn = a / na, b / nb
    return an @ bn.T, an, bn


def mnr_loss(anchors: np.ndarray, positives: np.ndarray, scale: float = 20.0,
             extra_negatives: np.ndarray | None = None) -> float:
    """In-batch softmax contrastive loss.

    Row i's positive is column i; every other column (the other rows'
    positives, plus any explicit extras) serves as a negative.
    """
    return _mnr_forward(anchors, positives, scale, extra_negatives)[0]


def _mnr_forward(anchors, positives, scale, extra_negatives=None):
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    n = anchors.shape[0]
    if n < 2:
        raise ValueError("MNR needs a batch of at least 2 (no negatives otherwise)")
    if positives.shape != anchors.shape:
        raise ValueError("anchor/positive batch shapes differ")
    cols = positives
    if extra_negatives is not None and len(extra_negatives):
        cols = np.vstack([positives, np.asarray(extra_negatives, dtype=np.float64)])
    cos, an, bn = _cosine_matrix(anchors, cols)
    logits = scale * cos
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), np.arange(n)].mean())
    return loss, (cos, an, bn, log_probs, anchors, cols, scale)


def mnr_loss_grads(anchors, positives, scale: float = 20.0, extra_negatives=None):
    """Loss plus gradients w.r.t. the anchor, positive and extra vectors."""
    loss, (cos, an, bn, log_probs, a, cols, scale) = _mnr_forward(
        anchors, positives, scale, extra_negatives)
    n = a.shape[0]
    g_logits = np.exp(log_probs)
    g_logits[np.arange(n), np.arange(n)] -= 1.0
    g_cos = g_logits * (scale / n)
    norm_a = np.linalg.norm(a, axis=1, keepdims=True)
    norm_b = np.linalg.norm(cols, axis=1, keepdims=True)
    # d cos_ij / d a_i = (bn_j - cos_ij * an_i) / |a_i|
    grad_a = (g_cos @ bn - (g_cos * cos).sum(axis=1, keepdims=True) * an) / norm_a
    grad_cols = (g_cos.T @ an - (g_cos * cos).sum(axis=0)[:, None] * bn) / norm_b
    n_pos = np.asarray(positives).shape[0]
    grad_pos = grad_cols[:n_pos]
    grad_extra = grad_cols[n_pos:] if grad_cols.shape[0] > n_pos else None
    return loss, grad_a, grad_pos, grad_extra


class Adam:
    """Adaptive-moment optimizer over a dict of numpy parameters."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            self.params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _build_batches(positive_pairs, bucket_of, config, rng):
    """Shuffle positives and pack batches with at most one pair per bucket."""
    remaining = list(positive_pairs)
    rng.shuffle(remaining)
    batches = []
    while remaining:
        batch, seen, deferred = [], set(), []
        for pair in remaining:
            bucket = bucket_of(pair.anchor.report_id)
            if len(batch) < config.batch_size and (
                    not config.no_duplicate_buckets_per_batch or bucket not in seen):
                batch.append(pair)
                seen.add(bucket)
            else:
                deferred.append(pair)
        if len(batch) >= 2:
            batches.append(batch)
        if len(batch) < 2:
            break
        remaining = deferred
    return batches


def train_encoder(pairs, passage_texts, config: EncoderTrainConfig,
                  encoder: BuiltinEncoder | None = None,
                  bucket_ids: dict[str, str] | None = None):
    """Fit the encoder projection on contrastive pairs; returns (encoder, loss curve).

    ``pairs`` come from the corpus pair generator; positives form the
    in-batch rows and the explicit negatives of the batch's anchors are
    appended as extra columns. ``passage_texts`` maps trace keys to passage
    text. Deterministic under config.seed.
    """
    encoder = encoder if encoder is not None else BuiltinEncoder()
    positives = [p for p in pairs if p.label == "positive"]
    if not positives:
        raise ValueError("no positive pairs to train on")
    neg_map: dict[str, list[str]] = {}
    for p in pairs:
        if p.label == "negative":
            neg_map.setdefault(p.anchor.key, []).append(p.other.key)

    def bucket_of(report_id: str) -> str:
        return bucket_ids.get(report_id, report_id) if bucket_ids else report_id

    import random as _random
    rng = _random.Random(config.seed)
    optimizer = Adam({"projection": encoder.projection}, lr=config.learning_rate)
    losses: list[float] = []
    for _ in range(config.epochs):
        for batch in _build_batches(positives, bucket_of, config, rng):
            a_base = np.stack([encoder.base_vector(passage_texts[p.anchor.key]) for p in batch])
            p_base = np.stack([encoder.base_vector(passage_texts[p.other.key]) for p in batch])
            extra_keys: list[str] = []
            for p in batch:
                extra_keys.extend(neg_map.get(p.anchor.key, [])[:1])
            extra_keys = extra_keys[:config.max_extra_negatives]
            e_base = (np.stack([encoder.base_vector(passage_texts[k]) for k in extra_keys])
                      if extra_keys else None)
            W = encoder.projection
            a_vec, p_vec = a_base @ W.T, p_base @ W.T
            e_vec = e_base @ W.T if e_base is not None else None
            loss, g_a, g_p, g_e = mnr_loss_grads(a_vec, p_vec, config.scale, e_vec)
            grad_w = g_a.T @ a_base + g_p.T @ p_base
            if g_e is not None:
                grad_w += g_e.T @ e_base
            optimizer.step({"projection": grad_w})
            losses.append(loss)
    return encoder, losses


def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise ValueError("correlation undefined: constant input vector")
    return float(dx @ dy) / denom


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Rank correlation with tie-corrected fractional ranks."""
    return pearson(_fractional_ranks(np.asarray(x)), _fractional_ranks(np.asarray(y)))


def eval_embeddings(pairs, passage_texts, provider) -> dict[str, float]:
    """Correlate pair cosine scores with the positive/negative labels.

    Returns Pearson and Spearman correlations plus the signed Euclidean
    statistic: mean negated distance over positives minus the same over
    negatives (positive when duplicates sit closer together).
    """
    if len(pairs) < 3:
        raise ValueError("need at least 3 labeled pairs")
    scores, labels, eucl = [], [], []
    for pair in pairs:
        u = np.asarray(provider.embed(passage_texts[pair.anchor.key]), dtype=np.float64)
        v = np.asarray(provider.embed(passage_texts[pair.other.key]), dtype=np.float64)
        scores.append(cosine_sim(u, v))
        labels.append(1.0 if pair.label == "positive" else 0.0)
        eucl.append(-float(np.linalg.norm(u - v)))
    labels_arr = np.array(labels)
    if labels_arr.min() == labels_arr.max():
        raise ValueError("need both positive and negative pairs")
    scores_arr = np.array(scores)
    eucl_arr = np.array(eucl)
    return {
        "pearson": pearson(scores_arr, labels_arr),
        "spearman": spearman(scores_arr, labels_arr),
        "euclidean_mean_signed": float(eucl_arr[labels_arr == 1.0].mean()
                                       - eucl_arr[labels_arr == 0.0].mean()),
    }
