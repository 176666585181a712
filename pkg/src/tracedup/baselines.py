"""Reference similarity methods: global frame alignment, prefix matching, TF-IDF retrieval.

All three operate on cleaned frame token sequences (see preprocess.clean_frame),
treating whole frames as alignment symbols. The TF-IDF index doubles as the
candidate source for negative-pair sampling.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict


def nw_similarity(frames_a: list[str], frames_b: list[str],
                  match: float = 1.0, mismatch: float = -1.0,
                  gap: float = -1.0) -> float:
    """Global alignment score over frame sequences, normalized by max length."""
    if not frames_a or not frames_b:
        raise ValueError("cannot align an empty trace")
    n, m = len(frames_a), len(frames_b)
    prev = [gap * j for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [gap * i] + [0.0] * m
        ai = frames_a[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (match if ai == frames_b[j - 1] else mismatch)
            cur[j] = max(diag, prev[j] + gap, cur[j - 1] + gap)
        prev = cur
    return prev[m] / max(n, m)


def prefix_match(frames_a: list[str], frames_b: list[str]) -> float:
    """Longest common prefix length over max length, in [0, 1]."""
    if not frames_a or not frames_b:
        raise ValueError("cannot compare an empty trace")
    common = 0
    for fa, fb in zip(frames_a, frames_b):
        if fa != fb:
            break
        common += 1
    return common / max(len(frames_a), len(frames_b))


class TfIdfIndex:
    """Inverted index over report token bags with cosine scoring.

    idf uses ln(1 + N/(1 + df)) smoothing; tf is the raw in-document count.
    Reports are the documents: one bag over the cleaned frame tokens of all
    the report's traces. Immutable once built.
    """

    def __init__(self, doc_tokens: dict[str, list[str]]):
        if not doc_tokens:
            raise ValueError("cannot build an index over zero reports")
        self.n_docs = len(doc_tokens)
        df: Counter = Counter()
        self._doc_tfs: dict[str, Counter] = {}
        for doc_id in sorted(doc_tokens):
            tf = Counter(doc_tokens[doc_id])
            self._doc_tfs[doc_id] = tf
            df.update(tf.keys())
        self.idf = {tok: math.log(1.0 + self.n_docs / (1.0 + d))
                    for tok, d in df.items()}
        self.postings: dict[str, list[tuple[str, float]]] = defaultdict(list)
        self.doc_norms: dict[str, float] = {}
        for doc_id, tf in self._doc_tfs.items():
            sq = 0.0
            for tok, count in tf.items():
                w = count * self.idf[tok]
                self.postings[tok].append((doc_id, w))
                sq += w * w
            self.doc_norms[doc_id] = math.sqrt(sq)

    def score_reports(self, query_tokens: list[str]) -> dict[str, float]:
        """Cosine similarity of the query bag against every indexed report."""
        qtf = Counter(query_tokens)
        qweights = {tok: c * self.idf[tok] for tok, c in qtf.items() if tok in self.idf}
        qnorm = math.sqrt(sum(w * w for w in qweights.values()))
        scores: dict[str, float] = defaultdict(float)
        for tok, qw in qweights.items():
            for doc_id, dw in self.postings[tok]:
                scores[doc_id] += qw * dw
        if qnorm == 0.0:
            return {}
        return {doc_id: s / (qnorm * self.doc_norms[doc_id])
                for doc_id, s in scores.items() if self.doc_norms[doc_id] > 0.0}


def tfidf_rank(query_tokens: list[str], index: TfIdfIndex,
               doc_buckets: dict[str, str], k: int,
               tie_break: dict[str, tuple] | None = None) -> list[tuple[str, float]]:
    """Top-k buckets by max member cosine score.

    ``doc_buckets`` maps report id -> bucket id for every indexed report.
    ``tie_break`` optionally maps bucket id to a sort key used (descending)
    among equal scores; the final fallback is ascending bucket id.
    """
    report_scores = index.score_reports(query_tokens)
    bucket_scores: dict[str, float] = {}
    for doc_id, bucket_id in doc_buckets.items():
        score = report_scores.get(doc_id, 0.0)
        best = bucket_scores.get(bucket_id)
        if best is None or score > best:
            bucket_scores[bucket_id] = score
    ranked = sorted(
        bucket_scores.items(),
        key=lambda item: (
            -item[1],
            tuple(-x for x in tie_break.get(item[0], ())) if tie_break else (),
            item[0],
        ),
    )
    return ranked[:k]
