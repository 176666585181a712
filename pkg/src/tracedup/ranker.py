"""Duplicate classifier: pairwise features, two-layer scorer, pairwise rank training.

The scorer takes the feature vector built from two aggregated report
representations and returns a duplication score. Training minimizes the
pairwise logistic (RankNet) loss over (anchor, duplicate, non-duplicate)
triplets, jointly updating the layer weights and the shared aggregation
priority alpha_raw. All gradients are hand-derived; inference is
dropout-free and deterministic.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .aggregate import (MODE_PMM, AggregationParams, aggregate_pair,
                        attention_pool, mean_pool, pmm_with_alpha_grad, rep_dim)
from .embed import Adam


def build_features(f_q: np.ndarray, f_s: np.ndarray) -> np.ndarray:
    """Difference/average/product blocks; symmetric under swapping Q and S."""
    f_q = np.asarray(f_q, dtype=np.float64)
    f_s = np.asarray(f_s, dtype=np.float64)
    if f_q.shape != f_s.shape:
        raise ValueError(f"representation shapes differ: {f_q.shape} vs {f_s.shape}")
    return np.concatenate([np.abs(f_q - f_s), (f_q + f_s) / 2.0, f_q * f_s])


@dataclass
class RankerTrainConfig:
    batch_size: int = 25
    learning_rate: float = 1e-4
    epochs: int = 10
    seed: int = 0
    patience: int = 5  # early-stop patience, in validation evaluations

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning rate must be positive and batch size >= 1")


class RankerModel:
    """Two linear layers with a halving hidden width and input dropout.

    Holds the shared aggregation parameter alpha_raw so the trainer can
    update it together with the layer weights.
    """

    def __init__(self, input_dim: int, dropout_p: float = 0.1, seed: int = 0,
                 agg_mode: str = MODE_PMM):
        if input_dim < 2:
            raise ValueError("input dimension too small")
        self.input_dim = input_dim
        self.hidden_dim = input_dim // 2
        self.dropout_p = dropout_p
        self.agg_mode = agg_mode
        rng = np.random.default_rng(seed)
        bound1 = 1.0 / math.sqrt(input_dim)
        bound2 = 1.0 / math.sqrt(self.hidden_dim)
        self.w1 = rng.uniform(-bound1, bound1, size=(self.hidden_dim, input_dim))
        self.b1 = np.zeros(self.hidden_dim)
        self.w2 = rng.uniform(-bound2, bound2, size=(1, self.hidden_dim))
        self.b2 = np.zeros(1)
        self.alpha_raw = np.zeros(())

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "alpha_raw": self.alpha_raw}

    def agg_params(self) -> AggregationParams:
        return AggregationParams(mode=self.agg_mode, alpha_raw=float(self.alpha_raw))

    def copy_weights(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def restore_weights(self, weights: dict[str, np.ndarray]) -> None:
        self.w1[...] = weights["w1"]
        self.b1[...] = weights["b1"]
        self.w2[...] = weights["w2"]
        self.b2[...] = weights["b2"]
        self.alpha_raw[...] = weights["alpha_raw"]


def dup_score(features: np.ndarray, model: RankerModel, mode: str = "infer",
              dropout_mask: np.ndarray | None = None) -> float:
    """Forward pass. Train mode applies inverted dropout to the features."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != model.input_dim:
        raise ValueError(f"feature length {features.shape[-1]} does not match "
                         f"model input {model.input_dim}")
    if mode == "train":
        if dropout_mask is None:
            raise ValueError("train mode requires a dropout mask")
        features = features * dropout_mask / (1.0 - model.dropout_p)
    hidden = np.maximum(model.w1 @ features + model.b1, 0.0)
    return float((model.w2 @ hidden + model.b2)[0])


def dup_score_batch(features: np.ndarray, model: RankerModel) -> np.ndarray:
    """Inference scores for a (batch, input_dim) feature matrix."""
    hidden = np.maximum(features @ model.w1.T + model.b1, 0.0)
    return (hidden @ model.w2.T + model.b2).ravel()


def ranknet_loss(score_pos: float, score_neg: float) -> float:
    """log(1 + exp(-(score_pos - score_neg))), overflow-safe."""
    delta = score_pos - score_neg
    return max(-delta, 0.0) + math.log1p(math.exp(-abs(delta)))


def _forward_backward_side(features, model, mask):
    """Score and gradient pieces for one (Q, S) side of a triplet."""
    dropped = features * mask / (1.0 - model.dropout_p)
    z = model.w1 @ dropped + model.b1
    hidden = np.maximum(z, 0.0)
    score = float((model.w2 @ hidden + model.b2)[0])
    return score, (dropped, z, hidden)


def _backprop_side(g_score, cache, features, model, mask, grads):
    dropped, z, hidden = cache
    grads["w2"] += g_score * hidden[None, :]
    grads["b2"] += np.array([g_score])
    dz = g_score * model.w2.ravel() * (z > 0.0)
    grads["w1"] += np.outer(dz, dropped)
    grads["b1"] += dz
    d_features = (model.w1.T @ dz) * mask / (1.0 - model.dropout_p)
    return d_features


def _feature_grads(d_features, f_q, f_s):
    """Split feature gradient into gradients on the two representations."""
    rep = len(f_q)
    g_abs, g_avg, g_prod = d_features[:rep], d_features[rep:2 * rep], d_features[2 * rep:]
    sign = np.sign(f_q - f_s)
    d_fq = g_abs * sign + g_avg * 0.5 + g_prod * f_s
    d_fs = -g_abs * sign + g_avg * 0.5 + g_prod * f_q
    return d_fq, d_fs


def triplet_loss_and_grads(qe, se_pos, se_neg, model: RankerModel,
                           train_mode: bool = True, rng=None):
    """RankNet loss of one triplet plus gradients for every trainable parameter.

    The anchor representation is recomputed per side under parametric
    max-mean because the selected trace pair depends on the candidate.
    """
    params = model.agg_params()
    if params.mode == MODE_PMM:
        fq_p, fs_p, gq_p, gs_p = pmm_with_alpha_grad(qe, se_pos, params)
        fq_n, fs_n, gq_n, gs_n = pmm_with_alpha_grad(qe, se_neg, params)
    else:
        fq_p, fs_p = aggregate_pair(qe, se_pos, params)
        fq_n, fs_n = aggregate_pair(qe, se_neg, params)
        gq_p = gs_p = gq_n = gs_n = None
    feat_pos = build_features(fq_p, fs_p)
    feat_neg = build_features(fq_n, fs_n)
    if train_mode:
        if rng is None:
            raise ValueError("train mode requires an rng for dropout")
        mask_pos = (rng.random(model.input_dim) >= model.dropout_p).astype(np.float64)
        mask_neg = (rng.random(model.input_dim) >= model.dropout_p).astype(np.float64)
    else:
        keep = 1.0 - model.dropout_p
        mask_pos = mask_neg = np.full(model.input_dim, keep)
    s_pos, cache_pos = _forward_backward_side(feat_pos, model, mask_pos)
    s_neg, cache_neg = _forward_backward_side(feat_neg, model, mask_neg)
    loss = ranknet_loss(s_pos, s_neg)
    # d loss / d delta = -sigmoid(-delta), computed overflow-safe
    delta = s_pos - s_neg
    if delta >= 0:
        e = math.exp(-delta)
        g_delta = -e / (1.0 + e)
    else:
        g_delta = -1.0 / (1.0 + math.exp(delta))
    grads = {"w1": np.zeros_like(model.w1), "b1": np.zeros_like(model.b1),
             "w2": np.zeros_like(model.w2), "b2": np.zeros_like(model.b2),
             "alpha_raw": np.zeros(())}
    d_feat_pos = _backprop_side(g_delta, cache_pos, feat_pos, model, mask_pos, grads)
    d_feat_neg = _backprop_side(-g_delta, cache_neg, feat_neg, model, mask_neg, grads)
    if params.mode == MODE_PMM:
        d_fq_p, d_fs_p = _feature_grads(d_feat_pos, fq_p, fs_p)
        d_fq_n, d_fs_n = _feature_grads(d_feat_neg, fq_n, fs_n)
        grads["alpha_raw"] += (d_fq_p @ gq_p + d_fs_p @ gs_p
                               + d_fq_n @ gq_n + d_fs_n @ gs_n)
    return loss, grads


def _trace_vectors(report, store) -> list[np.ndarray]:
    vectors = []
    for ref in report.trace_refs():
        if ref.key not in store:
            raise KeyError(f"no embedding cached for key {ref.key!r}")
        vectors.append(np.asarray(store.get(ref.key), dtype=np.float64))
    return vectors


def _ref_vector(ref, store) -> np.ndarray:
    if ref.key not in store:
        raise KeyError(f"no embedding cached for key {ref.key!r}")
    return np.asarray(store.get(ref.key), dtype=np.float64)


def train_ranker(triplets, store, config: RankerTrainConfig,
                 model: RankerModel | None = None, agg_mode: str = MODE_PMM,
                 embed_dim: int | None = None, val_metric=None):
    """Minimize mean RankNet loss over triplet batches.

    ``val_metric``, when given, is called with the model after each epoch and
    should return a number to maximize (validation MRR); training restores
    the best weights and stops after ``config.patience`` evaluations without
    improvement. Returns (model, log) where log holds per-epoch mean losses
    and validation scores.
    """
    if not triplets:
        raise ValueError("no triplets to train on")
    if embed_dim is None:
        embed_dim = len(store.get(triplets[0].anchor.key))
    input_dim = 3 * rep_dim(embed_dim, agg_mode)
    if model is None:
        model = RankerModel(input_dim, seed=config.seed, agg_mode=agg_mode)
    optimizer = Adam(model.params(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    order = np.arange(len(triplets))
    log = {"epoch_loss": [], "val_metric": []}
    best_score, best_weights, stale = -math.inf, None, 0
    for _ in range(config.epochs):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [triplets[k] for k in order[start:start + config.batch_size]]
            summed = None
            batch_loss = 0.0
            for triplet in batch:
                qe = [_ref_vector(triplet.anchor, store)]
                se_pos = [_ref_vector(triplet.positive, store)]
                se_neg = [_ref_vector(triplet.negative, store)]
                loss, grads = triplet_loss_and_grads(qe, se_pos, se_neg, model,
                                                     train_mode=True, rng=rng)
                batch_loss += loss
                if summed is None:
                    summed = grads
                else:
                    for key in summed:
                        summed[key] += grads[key]
            for key in summed:
                summed[key] /= len(batch)
            optimizer.step(summed)
            epoch_losses.append(batch_loss / len(batch))
        log["epoch_loss"].append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
        if val_metric is not None:
            score = float(val_metric(model))
            log["val_metric"].append(score)
            if score > best_score:
                best_score, best_weights, stale = score, model.copy_weights(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_weights is not None:
        model.restore_weights(best_weights)
    return model, log


@dataclass
class RankingResult:
    query_id: str
    buckets: list[tuple[str, float]]  # (bucket_id, score), best first
    true_bucket_rank: int | None
    top1_score: float


def _single_trace_features(qe, cand_mat, params, model):
    """Vectorized feature construction when every candidate has one trace.

    Equivalent to aggregate_pair + build_features per candidate; exact
    cross-trace argmax reduces to the best query trace per candidate.
    """
    qe_mat = np.stack(qe)
    if params.mode in (MODE_PMM, "max"):
        qn = qe_mat / np.linalg.norm(qe_mat, axis=1, keepdims=True)
        cn = cand_mat / np.linalg.norm(cand_mat, axis=1, keepdims=True)
        best = np.argmax(qn @ cn.T, axis=0)  # first max = smallest index
        sel_q = qe_mat[best]
    if params.mode == MODE_PMM:
        alpha = params.alpha
        mq = np.broadcast_to(mean_pool(qe), cand_mat.shape)
        f_q = np.hstack([alpha * sel_q, (1.0 - alpha) * mq])
        f_s = np.hstack([alpha * cand_mat, (1.0 - alpha) * cand_mat])
    elif params.mode == "max":
        f_q, f_s = sel_q, cand_mat
    elif params.mode == "mean":
        f_q = np.broadcast_to(mean_pool(qe), cand_mat.shape)
        f_s = cand_mat
    else:
        pooled = attention_pool(qe, params)
        f_q = np.broadcast_to(pooled, cand_mat.shape)
        f_s = cand_mat
    return np.hstack([np.abs(f_q - f_s), (f_q + f_s) / 2.0, f_q * f_s])


def rank_candidates(query_report, candidate_reports, model: RankerModel,
                    store, true_bucket: str | None = None) -> RankingResult:
    """Score candidates, pool per bucket by max member score, sort buckets.

    Ties break by the most recent member timestamp, then bucket id. The
    rank of ``true_bucket`` (or the query's own bucket) is recorded when
    that bucket appears among the candidates.
    """
    if not candidate_reports:
        raise ValueError("empty candidate set")
    params = model.agg_params()
    qe = _trace_vectors(query_report, store)
    if all(len(c.traces) == 1 for c in candidate_reports):
        cand_mat = np.stack([_ref_vector(c.trace_refs()[0], store)
                             for c in candidate_reports])
        features = _single_trace_features(qe, cand_mat, params, model)
    else:
        features = np.empty((len(candidate_reports), model.input_dim))
        for c, candidate in enumerate(candidate_reports):
            se = _trace_vectors(candidate, store)
            f_q, f_s = aggregate_pair(qe, se, params)
            features[c] = build_features(f_q, f_s)
    scores = dup_score_batch(features, model)
    bucket_best: dict[str, float] = {}
    bucket_recency: dict[str, int] = {}
    for candidate, score in zip(candidate_reports, scores):
        bid = candidate.bucket_id
        if bid not in bucket_best or score > bucket_best[bid]:
            bucket_best[bid] = float(score)
        day = candidate.timestamp_day
        if bid not in bucket_recency or day > bucket_recency[bid]:
            bucket_recency[bid] = day
    ranked = sorted(bucket_best.items(),
                    key=lambda kv: (-kv[1], -bucket_recency[kv[0]], kv[0]))
    target = true_bucket if true_bucket is not None else query_report.bucket_id
    rank = next((k for k, (bid, _) in enumerate(ranked, start=1) if bid == target), None)
    return RankingResult(query_id=query_report.report_id, buckets=ranked,
                         true_bucket_rank=rank, top1_score=ranked[0][1])


def unique_score(query_report, candidate_reports, model, store) -> float:
    """Top-1 bucket score; consumers threshold it for unique-vs-duplicate calls."""
    return rank_candidates(query_report, candidate_reports, model, store).top1_score


_CKPT_MAGIC = b"DTRK"
_CKPT_VERSION = 1


def save_model(model: RankerModel, path, config_hash: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        mode = model.agg_mode.encode("utf-8")
        ch = config_hash.encode("utf-8")
        fh.write(struct.pack("<HIIdH", _CKPT_VERSION, model.input_dim,
                             model.hidden_dim, model.dropout_p, len(mode)))
        fh.write(mode)
        fh.write(struct.pack("<H", len(ch)))
        fh.write(ch)
        for key in ("w1", "b1", "w2", "b2"):
            fh.write(getattr(model, key).astype("<f8").tobytes())
        fh.write(np.asarray(model.alpha_raw, dtype="<f8").tobytes())


def load_model(path) -> tuple[RankerModel, str]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a ranker checkpoint")
    version, input_dim, hidden_dim, dropout_p, mode_len = struct.unpack_from("<HIIdH", data, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<HIIdH")
    agg_mode = data[offset:offset + mode_len].decode("utf-8")
    offset += mode_len
    (ch_len,) = struct.unpack_from("<H", data, offset)
    offset += 2
    config_hash = data[offset:offset + ch_len].decode("utf-8")
    offset += ch_len
    model = RankerModel(input_dim, dropout_p=dropout_p, agg_mode=agg_mode)
    for key, shape in (("w1", (hidden_dim, input_dim)), ("b1", (hidden_dim,)),
                       ("w2", (1, hidden_dim)), ("b2", (1,))):
        size = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
        getattr(model, key)[...] = arr
        offset += size * 8
    model.alpha_raw[...] = np.frombuffer(data, dtype="<f8", count=1, offset=offset)[0]
    return model, config_hash


def config_fingerprint(obj) -> str:
    """Stable short hash of a config-like mapping, for provenance fields."""
    text = repr(sorted(obj.items())) if isinstance(obj, dict) else repr(obj)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
