"""Experiment orchestration: ingest -> split -> preprocess -> train -> rank -> metrics.

A run is a pure function of (corpus file, config, seed). The report's
canonical text deliberately excludes wall-clock timing so identical runs
serialize to identical bytes; timing is still measured and exposed for the
CSV artifacts.

Candidates for a query are all reports with a strictly earlier day index,
across every split. The TF-IDF baseline scores against one corpus-wide
index masked to the candidate window (the idf table sees the whole corpus;
recorded here as the variant used).
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import baselines
from .aggregate import MODES
from .corpus import (Corpus, chronological_split, generate_encoder_pairs,
                     generate_ranker_triplets, ingest_corpus, report_tokens,
                     trace_tokens)
from .embed import BuiltinEncoder, EncoderTrainConfig, eval_embeddings, train_encoder
from .metrics import RankingOutcome, mrr, recall_at_k, roc_auc
from .preprocess import (PreprocessConfig, clean_frame, preprocess,
                         remove_consecutive_duplicates, take_top_frames)
from .ranker import (RankerModel, RankerTrainConfig, config_fingerprint,
                     rank_candidates, train_ranker)
from .store import VectorStore

logger = logging.getLogger(__name__)

METHODS = ("dedupt", "nw", "prefix", "tfidf")


@dataclass
class ExperimentConfig:
    corpus_path: str = ""
    language: str = "java"
    method: str = "dedupt"
    train_days: int = 60
    val_days: int = 15
    test_days: int = 25
    top_n: int = 10
    trim_level: str = "L0"
    lowercase: bool = True
    include_exception_header: bool = True
    agg_mode: str = "pmm"
    embed_dim: int = 128
    vocab_buckets: int = 32768
    encoder_epochs: int = 3
    encoder_lr: float = 2e-5
    encoder_batch_size: int = 25
    encoder_scale: float = 20.0
    negatives_per_anchor: int = 1
    triplets_per_anchor: int = 2
    ranker_epochs: int = 8
    ranker_lr: float = 1e-4
    ranker_batch_size: int = 25
    patience: int = 5
    max_val_queries: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.agg_mode not in MODES:
            raise ValueError(f"unknown aggregation mode {self.agg_mode!r}")

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(top_n=self.top_n, trim_level=self.trim_level,
                                language=self.language, lowercase=self.lowercase,
                                include_exception_header=self.include_exception_header)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config_file(path) -> dict:
    """Flat ``key = value`` text; keys must match ExperimentConfig fields."""
    valid = {f.name: f.type for f in fields(ExperimentConfig)}
    casts = {"int": int, "float": float, "str": str,
             "bool": lambda v: v.lower() in ("1", "true", "yes", "on")}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = casts[valid[key]](value)
    return values


@dataclass
class EvalReport:
    method: str
    corpus_hash: str
    config_hash: str
    n_reports: int
    n_buckets: int
    n_queries: int
    n_duplicate_queries: int
    n_skipped_queries: int
    mrr: float
    rr1: float
    rr5: float
    rr10: float
    roc_auc: float | None
    embedding_before: dict | None
    embedding_after: dict | None
    stages: list[str]
    provenance: str
    median_query_seconds: float = 0.0  # excluded from canonical text

    def metric_rows(self) -> list[tuple[str, object]]:
        rows = [
            ("method", self.method),
            ("corpus_hash", self.corpus_hash),
            ("config_hash", self.config_hash),
            ("n_reports", self.n_reports),
            ("n_buckets", self.n_buckets),
            ("n_queries", self.n_queries),
            ("n_duplicate_queries", self.n_duplicate_queries),
            ("n_skipped_queries", self.n_skipped_queries),
            ("mrr", self.mrr),
            ("rr1", self.rr1),
            ("rr5", self.rr5),
            ("rr10", self.rr10),
            ("roc_auc", self.roc_auc),
        ]
        for label, stats in (("embedding_before", self.embedding_before),
                             ("embedding_after", self.embedding_after)):
            if stats:
                for key in sorted(stats):
                    rows.append((f"{label}.{key}", stats[key]))
        rows.append(("stages", ",".join(self.stages)))
        rows.append(("provenance", self.provenance))
        return rows

    def canonical_text(self) -> str:
        lines = []
        for key, value in self.metric_rows():
            if isinstance(value, float):
                value = repr(float(value))
            elif value is None:
                value = "na"
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentArtifacts:
    """Everything a run produces beyond the report, for CSVs and figures."""

    report: EvalReport
    outcomes: list[RankingOutcome]
    pair_distances: dict | None = None  # {"before": (pos, neg), "after": (pos, neg)}
    encoder: BuiltinEncoder | None = None
    model: RankerModel | None = None
    store: VectorStore | None = None


def _candidate_lists(corpus: Corpus, query_ids: list[str]):
    """Per-query candidate reports (strictly earlier day), computed by scan."""
    ordered = sorted(corpus.reports.values(), key=lambda r: (r.timestamp_day, r.report_id))
    for query_id in query_ids:
        query = corpus.reports[query_id]
        candidates = [r for r in ordered
                      if r.timestamp_day < query.timestamp_day and r.report_id != query_id]
        yield query, candidates


def build_passages(corpus: Corpus, pre_config: PreprocessConfig) -> dict[str, object]:
    passages = {}
    for report in corpus.reports.values():
        for index, trace in enumerate(report.traces):
            passage = preprocess(trace, pre_config, source=(report.report_id, index))
            passages[passage.key] = passage
    return passages


def embed_corpus(corpus: Corpus, passages: dict, encoder: BuiltinEncoder,
                 provenance: str) -> VectorStore:
    store = VectorStore(dimension=encoder.dim, provenance=provenance)
    for key in sorted(passages):
        store.put(key, encoder.embed(passages[key].text))
    return store


def _pair_distance_arrays(pairs, passages, encoder):
    pos, neg = [], []
    for pair in pairs:
        u = encoder.embed(passages[pair.anchor.key].text).astype(np.float64)
        v = encoder.embed(passages[pair.other.key].text).astype(np.float64)
        denom = np.linalg.norm(u) * np.linalg.norm(v)
        distance = 1.0 - float(u @ v / denom) if denom else 1.0
        (pos if pair.label == "positive" else neg).append(distance)
    return np.array(pos), np.array(neg)


def _baseline_rank(query, candidates, method: str, frame_cache: dict,
                   tfidf_index, pre_config):
    """Bucket ranking for one query under a non-learned similarity."""
    if method == "tfidf":
        tokens = []
        for trace in query.traces:
            tokens.extend(trace_tokens(trace, pre_config))
        report_scores = tfidf_index.score_reports(tokens)
        scored = [(c, report_scores.get(c.report_id, 0.0)) for c in candidates]
    else:
        sim = baselines.nw_similarity if method == "nw" else baselines.prefix_match
        query_frames = frame_cache[query.report_id]
        scored = []
        for candidate in candidates:
            best = max(sim(qf, cf)
                       for qf in query_frames
                       for cf in frame_cache[candidate.report_id])
            scored.append((candidate, best))
    bucket_best: dict[str, float] = {}
    bucket_recency: dict[str, int] = {}
    for candidate, score in scored:
        bid = candidate.bucket_id
        if bid not in bucket_best or score > bucket_best[bid]:
            bucket_best[bid] = score
        if bid not in bucket_recency or candidate.timestamp_day > bucket_recency[bid]:
            bucket_recency[bid] = candidate.timestamp_day
    ranked = sorted(bucket_best.items(),
                    key=lambda kv: (-kv[1], -bucket_recency[kv[0]], kv[0]))
    rank = next((k for k, (b, _) in enumerate(ranked, start=1)
                 if b == query.bucket_id), None)
    return ranked, rank


def _nonempty_frames(report, pre_config) -> list[list[str]]:
    """Cleaned frame sequences per trace (post dedup/top-N) for alignment baselines."""
    out = []
    for trace in report.traces:
        t = take_top_frames(remove_consecutive_duplicates(trace), pre_config.top_n)
        frames = [clean_frame(f, pre_config) or "<empty>" for f in t.frames]
        out.append(frames)
    return out


def run_experiment(config: ExperimentConfig, corpus: Corpus | None = None,
                   out_store: VectorStore | None = None) -> ExperimentArtifacts:
    stages: list[str] = []
    if corpus is None:
        stage = "ingest"
        try:
            corpus = ingest_corpus(config.corpus_path, config.language)
        except Exception as exc:
            raise RuntimeError(f"stage {stage} failed: {exc}") from exc
        stages.append(stage)
    if not len(corpus):
        raise RuntimeError("stage ingest failed: empty corpus")
    pre_config = config.preprocess_config()
    split = chronological_split(corpus, config.train_days, config.val_days,
                                config.test_days)
    stages.append("split")
    passages = build_passages(corpus, pre_config)
    stages.append("preprocess")

    encoder = None
    model = None
    store = out_store
    embedding_before = embedding_after = None
    pair_distances = None

    if config.method == "dedupt":
        try:
            pairs = generate_encoder_pairs(corpus, split, pre_config,
                                           negatives_per_anchor=config.negatives_per_anchor,
                                           seed=config.seed)
        except ValueError as exc:
            raise RuntimeError(f"stage pair-generation failed: {exc}") from exc
        passage_texts = {k: p.text for k, p in passages.items()}
        bucket_ids = {r.report_id: r.bucket_id for r in corpus.reports.values()}
        encoder = BuiltinEncoder(dim=config.embed_dim, vocab_buckets=config.vocab_buckets,
                                 seed=config.seed)
        eval_pairs = pairs[: min(len(pairs), 2000)]
        embedding_before = eval_embeddings(eval_pairs, passage_texts, encoder)
        before_dist = _pair_distance_arrays(eval_pairs, passages, encoder)
        enc_config = EncoderTrainConfig(scale=config.encoder_scale,
                                        batch_size=config.encoder_batch_size,
                                        epochs=config.encoder_epochs,
                                        learning_rate=config.encoder_lr,
                                        seed=config.seed)
        encoder, _ = train_encoder(pairs, passage_texts, enc_config,
                                   encoder=encoder, bucket_ids=bucket_ids)
        stages.append("train-encoder")
        embedding_after = eval_embeddings(eval_pairs, passage_texts, encoder)
        after_dist = _pair_distance_arrays(eval_pairs, passages, encoder)
        pair_distances = {"before": before_dist, "after": after_dist}
        store = embed_corpus(corpus, passages, encoder, provenance=encoder.name)
        stages.append("embed")
        triplets = generate_ranker_triplets(corpus, split, pre_config,
                                            seed=config.seed + 1,
                                            triplets_per_anchor=config.triplets_per_anchor)
        val_metric = _make_val_metric(corpus, split, store, config)
        rk_config = RankerTrainConfig(batch_size=config.ranker_batch_size,
                                      learning_rate=config.ranker_lr,
                                      epochs=config.ranker_epochs,
                                      seed=config.seed, patience=config.patience)
        model, _ = train_ranker(triplets, store, rk_config, agg_mode=config.agg_mode,
                                embed_dim=config.embed_dim, val_metric=val_metric)
        stages.append("train-ranker")
        frame_cache = None
        tfidf_index = None
    else:
        frame_cache = {rid: _nonempty_frames(r, pre_config)
                       for rid, r in corpus.reports.items()}
        tfidf_index = baselines.TfIdfIndex(
            {rid: report_tokens(r, pre_config) for rid, r in corpus.reports.items()})

    outcomes: list[RankingOutcome] = []
    skipped = 0
    query_times: list[float] = []
    for query, candidates in _candidate_lists(corpus, sorted(split.test)):
        if not candidates:
            skipped += 1
            continue
        has_dup = any(c.bucket_id == query.bucket_id for c in candidates)
        t0 = time.perf_counter()
        if config.method == "dedupt":
            result = rank_candidates(query, candidates, model, store)
            rank, top1 = result.true_bucket_rank, result.top1_score
        else:
            ranked, rank = _baseline_rank(query, candidates, config.method,
                                          frame_cache, tfidf_index, pre_config)
            top1 = ranked[0][1]
        query_times.append(time.perf_counter() - t0)
        outcomes.append(RankingOutcome(query_id=query.report_id,
                                       true_bucket_rank=rank if has_dup else None,
                                       top1_score=top1,
                                       has_true_duplicate=has_dup))
    stages.append("rank")

    dup_outcomes = [o for o in outcomes if o.has_true_duplicate]
    if not dup_outcomes:
        raise RuntimeError("stage rank failed: no duplicate queries in the test window")
    labels = [o.has_true_duplicate for o in outcomes]
    auc = None
    if any(labels) and not all(labels):
        auc = roc_auc(labels, [o.top1_score for o in outcomes])
    report = EvalReport(
        method=config.method,
        corpus_hash=corpus.content_hash()[:16],
        config_hash=config_fingerprint(config.as_dict()),
        n_reports=len(corpus),
        n_buckets=len(corpus.buckets),
        n_queries=len(outcomes),
        n_duplicate_queries=len(dup_outcomes),
        n_skipped_queries=skipped,
        mrr=mrr(outcomes),
        rr1=recall_at_k(outcomes, 1),
        rr5=recall_at_k(outcomes, 5),
        rr10=recall_at_k(outcomes, 10),
        roc_auc=auc,
        embedding_before=embedding_before,
        embedding_after=embedding_after,
        stages=stages,
        provenance=(encoder.name if encoder
                    else f"baseline:{config.method};tfidf=ln(1+N/(1+df))*tf,cosine"),
        median_query_seconds=statistics.median(query_times) if query_times else 0.0,
    )
    return ExperimentArtifacts(report=report, outcomes=outcomes,
                               pair_distances=pair_distances, encoder=encoder,
                               model=model, store=store)


def _make_val_metric(corpus, split, store, config):
    """Validation-MRR closure for early stopping; None when val has no queries."""
    pairs = list(_candidate_lists(corpus, sorted(split.val)[: config.max_val_queries]))
    usable = [(q, c) for q, c in pairs
              if c and any(r.bucket_id == q.bucket_id for r in c)]
    if not usable:
        return None

    def val_metric(model) -> float:
        outcomes = []
        for query, candidates in usable:
            result = rank_candidates(query, candidates, model, store)
            outcomes.append(RankingOutcome(query_id=query.report_id,
                                           true_bucket_rank=result.true_bucket_rank,
                                           top1_score=result.top1_score,
                                           has_true_duplicate=True))
        return mrr(outcomes)

    return val_metric


def run_split_sweep(config: ExperimentConfig, splits: list[tuple[int, int, int]],
                    corpus: Corpus | None = None):
    """One experiment per (train, val, test) day triple, plus mean/SD summary."""
    results = []
    for train_days, val_days, test_days in splits:
        cfg = replace(config, train_days=train_days, val_days=val_days,
                      test_days=test_days)
        results.append(run_experiment(cfg, corpus=corpus))
    summary = {}
    for key in ("mrr", "rr1"):
        values = [getattr(r.report, key) for r in results]
        summary[f"{key}_mean"] = statistics.fmean(values)
        summary[f"{key}_sd"] = statistics.pstdev(values) if len(values) > 1 else 0.0
    return results, summary
