"""Labeled crash-report corpora: ingestion, chronological splits, pair/triplet sampling.

A corpus file is UTF-8 with one JSON report per line:

    {"report_id": "r1", "creation_ts": "2009-03-01T10:00:00", "bucket_id": "b1",
     "traces": ["raw trace text", ...]}

``creation_ts`` may also be epoch seconds. A trace entry is raw text (parsed
with the configured language parser), a list of frames (dicts with
``function``/``path``/``file``/``line`` or bare function-name strings), or a
dict ``{"frames": [...], "header": ..., "language": ...}``. Reports whose
traces all fail to parse are dropped with a warning; malformed lines and
duplicate report ids abort ingestion.

All sampling here is a pure function of (corpus, config, seed): per-anchor
generators are seeded from the master seed and the anchor key, so anchors
can be processed in any order or in parallel without changing the output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .baselines import TfIdfIndex, tfidf_rank
from .preprocess import PreprocessConfig, clean_frame, preprocess, remove_consecutive_duplicates, take_top_frames
from .traceparse import StackFrame, StackTrace, parse_gdb, parse_java

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


@dataclass(frozen=True, order=True)
class TraceRef:
    """Reference to one stack trace inside one report."""

    report_id: str
    trace_index: int

    @property
    def key(self) -> str:
        return f"{self.report_id}#{self.trace_index}"


@dataclass
class CrashReport:
    report_id: str
    timestamp_day: int
    bucket_id: str
    traces: list[StackTrace]

    def __post_init__(self):
        if not self.traces:
            raise ValueError(f"report {self.report_id} has no traces")
        if self.timestamp_day < 0:
            raise ValueError(f"report {self.report_id} has negative day index")

    def trace_refs(self) -> list[TraceRef]:
        return [TraceRef(self.report_id, i) for i in range(len(self.traces))]


@dataclass
class Bucket:
    bucket_id: str
    report_ids: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class PairSample:
    anchor: TraceRef
    other: TraceRef
    label: str  # "positive" | "negative"


@dataclass(frozen=True)
class Triplet:
    anchor: TraceRef
    positive: TraceRef
    negative: TraceRef


@dataclass
class SplitSet:
    train_days: tuple[int, int]
    val_days: tuple[int, int]
    test_days: tuple[int, int]
    train: list[str]
    val: list[str]
    test: list[str]
    out_of_range: list[str] = field(default_factory=list)


class Corpus:
    """Immutable after construction; safe for concurrent readers."""

    def __init__(self, reports: list[CrashReport]):
        self.reports: dict[str, CrashReport] = {}
        for report in sorted(reports, key=lambda r: (r.timestamp_day, r.report_id)):
            if report.report_id in self.reports:
                raise ValueError(f"duplicate report_id {report.report_id}")
            self.reports[report.report_id] = report
        self.buckets: dict[str, Bucket] = {}
        for report in self.reports.values():
            bucket = self.buckets.setdefault(report.bucket_id, Bucket(report.bucket_id))
            bucket.report_ids.append(report.report_id)

    def __len__(self) -> int:
        return len(self.reports)

    @property
    def day_span(self) -> int:
        if not self.reports:
            return 0
        return max(r.timestamp_day for r in self.reports.values()) + 1

    def duplicate_count(self) -> int:
        """Reports that are not the first member of their bucket."""
        return sum(len(b.report_ids) - 1 for b in self.buckets.values())

    def multi_trace_fraction(self) -> float:
        if not self.reports:
            return 0.0
        multi = sum(1 for r in self.reports.values() if len(r.traces) > 1)
        return multi / len(self.reports)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for report_id, report in self.reports.items():
            h.update(report_id.encode())
            h.update(str(report.timestamp_day).encode())
            h.update(report.bucket_id.encode())
            for trace in report.traces:
                h.update(trace.exception_header.encode())
                for frame in trace.frames:
                    h.update(f"{frame.qualified_path}|{frame.function}".encode())
        return h.hexdigest()


def _parse_timestamp(value) -> int:
    """Epoch seconds from ISO-8601 text or a numeric value."""
    if isinstance(value, (int, float)):
        return int(value)
    dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _frames_from_list(entries) -> list[StackFrame]:
    frames = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            frames.append(StackFrame(ordinal=i, function=entry, raw=entry))
            continue
        func = entry.get("function") or entry.get("method") or ""
        if not func:
            continue
        line = entry.get("line", entry.get("fileline"))
        frames.append(StackFrame(
            ordinal=i,
            function=func,
            qualified_path=entry.get("path", entry.get("qualified_path", "")) or "",
            source_file=entry.get("file", "") or "",
            line=int(line) if line not in (None, "") else None,
            raw=entry.get("raw", func),
        ))
    return frames


def _traces_from_entry(entry, language: str) -> list[StackTrace]:
    if isinstance(entry, str):
        parser = parse_java if language == "java" else parse_gdb
        return parser(entry)
    if isinstance(entry, list):
        frames = _frames_from_list(entry)
        return [StackTrace(frames=frames, language=language)] if frames else []
    if isinstance(entry, dict) and "frames" in entry:
        frames = _frames_from_list(entry["frames"])
        if not frames:
            return []
        return [StackTrace(frames=frames,
                           exception_header=entry.get("header", "") or "",
                           language=entry.get("language", language))]
    raise ValueError(f"unsupported trace entry type {type(entry).__name__}")


def ingest_corpus(path, language: str = "java") -> Corpus:
    """Load a line-delimited corpus file. See the module docstring for the format."""
    raw_reports = []
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                report_id = record["report_id"]
                bucket_id = record["bucket_id"]
                epoch = _parse_timestamp(record["creation_ts"])
                trace_entries = record["traces"]
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: malformed report on line {lineno}: {exc}") from exc
            traces: list[StackTrace] = []
            for entry in trace_entries:
                traces.extend(_traces_from_entry(entry, language))
            if not traces:
                dropped += 1
                logger.warning("report %s (line %d) has no parseable traces; dropped",
                               report_id, lineno)
                continue
            raw_reports.append((report_id, epoch, bucket_id, traces))
    if dropped:
        logger.warning("dropped %d reports with no parseable traces", dropped)
    if not raw_reports:
        return Corpus([])
    epoch_min = min(epoch for _, epoch, _, _ in raw_reports)
    day0 = epoch_min // SECONDS_PER_DAY
    reports = [
        CrashReport(report_id=rid, timestamp_day=epoch // SECONDS_PER_DAY - day0,
                    bucket_id=bid, traces=traces)
        for rid, epoch, bid, traces in raw_reports
    ]
    return Corpus(reports)


def convert_tracker_record(record: dict) -> dict:
    """Map one public issue-tracker dump record to the native line format.

    Accepts the field spellings used by the Netbeans/Eclipse/Gnome/Ubuntu
    dumps: ``bug_id``/``dup_id``/``creation_ts`` and ``stacktrace`` (or a
    list under ``stacktraces``) holding frame dicts.
    """
    report_id = str(record.get("report_id", record.get("bug_id")))
    if report_id in ("None", ""):
        raise ValueError("record has no report/bug id")
    dup = record.get("bucket_id", record.get("dup_id"))
    bucket_id = str(dup) if dup not in (None, "", "None") else report_id
    ts = record.get("creation_ts", record.get("creation_time", record.get("timestamp")))
    if ts is None:
        raise ValueError(f"record {report_id} has no creation timestamp")
    traces = record.get("traces")
    if traces is None:
        st = record.get("stacktraces", record.get("stacktrace"))
        if st is None:
            raise ValueError(f"record {report_id} has no stack traces")
        traces = [_order_by_depth(frames) for frames in _tracker_trace_lists(st)]
    return {"report_id": report_id, "creation_ts": ts,
            "bucket_id": bucket_id, "traces": traces}


def _tracker_trace_lists(st) -> list:
    """Normalize the dump's stacktrace field to a list of frame lists."""
    if isinstance(st, dict):
        return [st.get("frames", [])]
    if not isinstance(st, list) or not st:
        return [st] if st else []
    first = st[0]
    if isinstance(first, dict):
        # frame dicts directly = one trace; {"frames": ...} wrappers = many
        if "frames" in first:
            return [entry.get("frames", []) for entry in st]
        return [st]
    if isinstance(first, list):
        return st
    return [st]


def _order_by_depth(frames):
    if (isinstance(frames, list) and frames and isinstance(frames[0], dict)
            and "depth" in frames[0]):
        return sorted(frames, key=lambda f: f.get("depth", 0))
    return frames


def convert_tracker_dump(src_path, dest_path) -> int:
    """Rewrite a tracker dump (JSON array or JSON lines) as a native corpus file."""
    with open(src_path, encoding="utf-8") as fh:
        head = fh.read(1)
        fh.seek(0)
        records = json.load(fh) if head == "[" else [json.loads(l) for l in fh if l.strip()]
    count = 0
    with open(dest_path, "w", encoding="utf-8") as out:
        for record in records:
            out.write(json.dumps(convert_tracker_record(record), sort_keys=True) + "\n")
            count += 1
    return count


def write_corpus_file(corpus: Corpus, path) -> None:
    """Serialize with pre-parsed frame lists, day indices as epoch-day timestamps."""
    with open(path, "w", encoding="utf-8") as fh:
        for report in corpus.reports.values():
            traces = []
            for trace in report.traces:
                traces.append({
                    "frames": [
                        {"function": f.function, "path": f.qualified_path,
                         "file": f.source_file, "line": f.line}
                        for f in trace.frames
                    ],
                    "header": trace.exception_header,
                    "language": trace.language,
                })
            record = {
                "report_id": report.report_id,
                "creation_ts": report.timestamp_day * SECONDS_PER_DAY,
                "bucket_id": report.bucket_id,
                "traces": traces,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def chronological_split(corpus: Corpus, train_days: int, val_days: int,
                        test_days: int) -> SplitSet:
    """Assign reports to contiguous half-open day intervals train -> val -> test."""
    if min(train_days, val_days, test_days) <= 0:
        raise ValueError("split day counts must be positive")
    span = corpus.day_span
    if train_days + val_days + test_days > span:
        logger.warning("split (%d,%d,%d) exceeds corpus span of %d days; truncating",
                       train_days, val_days, test_days, span)
    train_iv = (0, train_days)
    val_iv = (train_days, train_days + val_days)
    test_iv = (train_days + val_days, train_days + val_days + test_days)
    split = SplitSet(train_days=train_iv, val_days=val_iv, test_days=test_iv,
                     train=[], val=[], test=[])
    for report in corpus.reports.values():
        day = report.timestamp_day
        if train_iv[0] <= day < train_iv[1]:
            split.train.append(report.report_id)
        elif val_iv[0] <= day < val_iv[1]:
            split.val.append(report.report_id)
        elif test_iv[0] <= day < test_iv[1]:
            split.test.append(report.report_id)
        else:
            split.out_of_range.append(report.report_id)
    return split


def report_tokens(report: CrashReport, config: PreprocessConfig) -> list[str]:
    """Cleaned frame tokens of all the report's traces, post dedup and top-N."""
    tokens: list[str] = []
    for trace in report.traces:
        tokens.extend(trace_tokens(trace, config))
    return tokens


def trace_tokens(trace: StackTrace, config: PreprocessConfig) -> list[str]:
    trace = take_top_frames(remove_consecutive_duplicates(trace), config.top_n)
    tokens: list[str] = []
    for frame in trace.frames:
        tokens.extend(clean_frame(frame, config).split())
    return tokens


def _anchor_rng(seed: int, ref: TraceRef) -> random.Random:
    return random.Random(f"{seed}:{ref.key}")


class _NegativeSampler:
    """Shared machinery for drawing foreign-bucket traces near an anchor.

    Candidate buckets are the top ``top_buckets`` by TF-IDF max-member score
    against the anchor trace, excluding the anchor's own bucket; when that
    set is empty the sampler falls back to a uniform random foreign bucket.
    """

    def __init__(self, corpus: Corpus, member_ids: list[str],
                 config: PreprocessConfig, top_buckets: int = 50):
        self.corpus = corpus
        self.config = config
        self.top_buckets = top_buckets
        self.members: dict[str, CrashReport] = {rid: corpus.reports[rid] for rid in member_ids}
        self.bucket_members: dict[str, list[str]] = {}
        for rid in sorted(self.members):
            self.bucket_members.setdefault(self.members[rid].bucket_id, []).append(rid)
        self.all_buckets = sorted(self.bucket_members)
        if len(self.all_buckets) < 2:
            raise ValueError("need at least two buckets to sample negatives")
        self.index = TfIdfIndex({rid: report_tokens(r, config)
                                 for rid, r in self.members.items()})
        self.doc_buckets = {rid: self.members[rid].bucket_id for rid in self.members}

    def candidate_buckets(self, anchor: TraceRef) -> list[str]:
        trace = self.corpus.reports[anchor.report_id].traces[anchor.trace_index]
        ranked = tfidf_rank(trace_tokens(trace, self.config), self.index,
                            self.doc_buckets, self.top_buckets)
        own = self.corpus.reports[anchor.report_id].bucket_id
        return [b for b, _ in ranked if b != own]

    def draw(self, anchor: TraceRef, rng: random.Random) -> TraceRef:
        candidates = self.candidate_buckets(anchor)
        if not candidates:
            own = self.corpus.reports[anchor.report_id].bucket_id
            candidates = [b for b in self.all_buckets if b != own]
        bucket_id = rng.choice(candidates)
        report = self.members[rng.choice(self.bucket_members[bucket_id])]
        return TraceRef(report.report_id, rng.randrange(len(report.traces)))


def _train_anchors(corpus: Corpus, split: SplitSet) -> tuple[list[TraceRef], dict[str, list[str]]]:
    """Anchor traces (from multi-member train buckets) and the bucket membership map."""
    train_ids = set(split.train)
    bucket_members: dict[str, list[str]] = {}
    for rid in sorted(train_ids):
        bucket_members.setdefault(corpus.reports[rid].bucket_id, []).append(rid)
    anchors: list[TraceRef] = []
    for bucket_id in sorted(bucket_members):
        members = bucket_members[bucket_id]
        if len(members) < 2:
            continue
        for rid in members:
            anchors.extend(corpus.reports[rid].trace_refs())
    if not anchors:
        raise ValueError("training split has no bucket with two or more members")
    return anchors, bucket_members


def _draw_positive(corpus: Corpus, bucket_members: dict[str, list[str]],
                   anchor: TraceRef, rng: random.Random) -> TraceRef:
    bucket_id = corpus.reports[anchor.report_id].bucket_id
    others = [rid for rid in bucket_members[bucket_id] if rid != anchor.report_id]
    report = corpus.reports[rng.choice(others)]
    return TraceRef(report.report_id, rng.randrange(len(report.traces)))


def generate_encoder_pairs(corpus: Corpus, split: SplitSet, config: PreprocessConfig,
                           negatives_per_anchor: int = 1, seed: int = 0,
                           top_buckets: int = 50) -> list[PairSample]:
    """Equal counts of positive and negative pairs per anchor trace."""
    if negatives_per_anchor < 1:
        raise ValueError("negatives_per_anchor must be >= 1")
    anchors, bucket_members = _train_anchors(corpus, split)
    sampler = _NegativeSampler(corpus, sorted(set(split.train)), config, top_buckets)
    pairs: list[PairSample] = []
    for anchor in anchors:
        rng = _anchor_rng(seed, anchor)
        for _ in range(negatives_per_anchor):
            pairs.append(PairSample(anchor, _draw_positive(corpus, bucket_members, anchor, rng),
                                    "positive"))
            pairs.append(PairSample(anchor, sampler.draw(anchor, rng), "negative"))
    return pairs


def generate_ranker_triplets(corpus: Corpus, split: SplitSet, config: PreprocessConfig,
                             seed: int = 0, triplets_per_anchor: int = 1,
                             top_buckets: int = 50) -> list[Triplet]:
    """(anchor, positive, negative) trace triples for pairwise rank training."""
    if triplets_per_anchor < 1:
        raise ValueError("triplets_per_anchor must be >= 1")
    anchors, bucket_members = _train_anchors(corpus, split)
    sampler = _NegativeSampler(corpus, sorted(set(split.train)), config, top_buckets)
    triplets: list[Triplet] = []
    for anchor in anchors:
        rng = _anchor_rng(seed, anchor)
        for _ in range(triplets_per_anchor):
            triplets.append(Triplet(anchor,
                                    _draw_positive(corpus, bucket_members, anchor, rng),
                                    sampler.draw(anchor, rng)))
    return triplets


_SYLLABLES = ["al", "an", "ar", "bo", "ce", "co", "da", "de", "di", "do", "en",
              "er", "es", "fa", "ga", "ha", "in", "ir", "ka", "le", "li", "lo",
              "ma", "me", "mi", "na", "ne", "no", "or", "pa", "pe", "po", "ra",
              "re", "ri", "ro", "sa", "se", "si", "so", "ta", "te", "ti", "to",
              "ul", "un", "ur", "va", "ve", "vi", "za", "zo"]


def _make_name(rng: random.Random, parts: int) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(parts))


def _make_variant_frame(rng: random.Random, language: str) -> StackFrame:
    """One vocabulary entry: a (path, function) pair with fresh random names."""
    if language == "java":
        pkg = f"{_make_name(rng, 2)}.{_make_name(rng, 2)}"
        cls = _make_name(rng, 3).capitalize()
        return StackFrame(ordinal=0, function=_make_name(rng, 3),
                          qualified_path=f"{pkg}.{cls}")
    return StackFrame(ordinal=0, function=f"{_make_name(rng, 2)}_{_make_name(rng, 3)}",
                      qualified_path=_make_name(rng, 2))


def synth_corpus(bucket_count: int, reports_per_bucket: int, frame_vocab: int,
                 mutation_rate: float, seed: int, *, variants_per_family: int = 3,
                 trace_len: int = 8, traces_per_report: int = 1,
                 day_span: int = 100, language: str = "java") -> Corpus:
    """Generate a labeled corpus of mutated bucket prototypes.

    The frame vocabulary is organized as ``frame_vocab`` families of
    ``variants_per_family`` interchangeable frames, mimicking equivalent
    subroutines reached through alternative paths. A bucket prototype is an
    ordered family sequence with one variant chosen per position; member
    traces mutate it by variant renames, random-frame insertion and tail
    truncation, each applied at ``mutation_rate``.
    """
    if min(bucket_count, reports_per_bucket, frame_vocab) <= 0:
        raise ValueError("counts must be positive")
    if not 0.0 <= mutation_rate <= 1.0:
        raise ValueError("mutation rate must be in [0, 1]")
    rng = random.Random(seed)
    vocab: list[list[StackFrame]] = [
        [_make_variant_frame(rng, language) for _ in range(variants_per_family)]
        for _ in range(frame_vocab)
    ]
    length = min(trace_len, frame_vocab)
    reports: list[CrashReport] = []
    seq = 0
    for bi in range(bucket_count):
        families = rng.sample(range(frame_vocab), length)
        proto_variants = [rng.randrange(variants_per_family) for _ in families]
        bucket_id = f"bucket{bi:05d}"
        for _ in range(reports_per_bucket):
            traces = []
            for _ in range(traces_per_report):
                frames: list[tuple[int, int]] = list(zip(families, proto_variants))
                mutated = []
                for fam, var in frames:
                    if rng.random() < mutation_rate and variants_per_family > 1:
                        var = (var + rng.randrange(1, variants_per_family)) % variants_per_family
                    mutated.append((fam, var))
                if rng.random() < mutation_rate:
                    pos = rng.randrange(len(mutated) + 1)
                    mutated.insert(pos, (rng.randrange(frame_vocab),
                                         rng.randrange(variants_per_family)))
                if rng.random() < mutation_rate and len(mutated) > 3:
                    mutated = mutated[:len(mutated) - rng.randint(1, 2)]
                trace_frames = [
                    StackFrame(ordinal=k, function=vocab[fam][var].function,
                               qualified_path=vocab[fam][var].qualified_path)
                    for k, (fam, var) in enumerate(mutated)
                ]
                traces.append(StackTrace(frames=trace_frames, language=language))
            reports.append(CrashReport(
                report_id=f"r{seq:06d}",
                timestamp_day=rng.randrange(day_span),
                bucket_id=bucket_id,
                traces=traces,
            ))
            seq += 1
    return Corpus(reports)
