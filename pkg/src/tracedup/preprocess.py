"""Four-stage trace-to-text pipeline: dedup, top-N sampling, cleaning, positional coding.

The stages run in a fixed order. Cleaning is the only language-dependent
stage: Java frames can be trimmed at method or class level, C/C++ frames get
debugger artifacts (frame numbers, hex addresses, glib/gtk name prefixes)
stripped. Output passages contain only lowercase alphanumerics, spaces,
sentence periods and positional markers, which keeps them friendly to
subword tokenizers downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .traceparse import StackFrame, StackTrace

TRIM_L0 = "L0"
TRIM_L1 = "L1"
TRIM_L2 = "L2"

DEFAULT_STRIP_PREFIXES = ("IA__", "_GI_", "__GI_")

_SEPARATORS_RE = re.compile(r"[._:;,()<>$/\\\-]+")
_NON_ALNUM_RE = re.compile(r"[^0-9A-Za-z ]+")
_HEX_RE = re.compile(r"\b0[xX][0-9a-fA-F]+\b")
_NUM_TOKEN_RE = re.compile(r"\b\d+\b")
_WS_RE = re.compile(r"\s+")
_FRAME_NO_RE = re.compile(r"^#\d+\s*")


@dataclass
class PreprocessConfig:
    top_n: int = 10
    trim_level: str = TRIM_L0
    language: str = "java"
    lowercase: bool = True
    include_exception_header: bool = True
    strip_prefixes: tuple[str, ...] = DEFAULT_STRIP_PREFIXES

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.trim_level not in (TRIM_L0, TRIM_L1, TRIM_L2):
            raise ValueError(f"unknown trim level {self.trim_level!r}")
        if self.trim_level != TRIM_L0 and self.language != "java":
            raise ValueError("trim levels L1/L2 only apply to java traces")


@dataclass(frozen=True)
class Passage:
    text: str
    frame_count: int
    source: tuple[str, int] = ("", 0)  # (report_id, trace_index)

    @property
    def key(self) -> str:
        return f"{self.source[0]}#{self.source[1]}"


def remove_consecutive_duplicates(trace: StackTrace) -> StackTrace:
    """Collapse maximal runs of frames sharing (qualified_path, function)."""
    kept: list[StackFrame] = []
    prev = None
    for frame in trace.frames:
        ident = (frame.qualified_path, frame.function)
        if ident != prev:
            kept.append(frame)
        prev = ident
    return StackTrace(frames=kept, exception_header=trace.exception_header,
                      language=trace.language)


def take_top_frames(trace: StackTrace, n: int) -> StackTrace:
    if n < 1:
        raise ValueError("n must be >= 1")
    return StackTrace(frames=trace.frames[:n], exception_header=trace.exception_header,
                      language=trace.language)


def clean_text(text: str, lowercase: bool = True) -> str:
    """Normalize raw frame or header text to the passage alphabet."""
    text = _FRAME_NO_RE.sub("", text.strip())
    text = _HEX_RE.sub(" ", text)
    # underscores join identifier words the same way dots join packages
    text = text.replace("_", " ")
    text = _SEPARATORS_RE.sub(" ", text)
    text = _NON_ALNUM_RE.sub(" ", text)
    text = _NUM_TOKEN_RE.sub(" ", text)
    text = _WS_RE.sub(" ", text).strip()
    return text.lower() if lowercase else text


def clean_frame(frame: StackFrame, config: PreprocessConfig) -> str:
    """Render one frame as a cleaned token string, honoring the trim level."""
    if config.language == "java":
        segments = [s for s in frame.qualified_path.split(".") if s]
        if config.trim_level == TRIM_L0:
            segments = segments + [frame.function]
        elif config.trim_level == TRIM_L2:
            segments = segments[:-1]
        # L1 keeps the path (method dropped), L2 drops the class segment too
        text = " ".join(segments)
    else:
        func = frame.function
        for prefix in config.strip_prefixes:
            if func.startswith(prefix):
                func = func[len(prefix):]
                break
        parts = [frame.qualified_path, func] if frame.qualified_path else [func]
        text = " ".join(parts)
    return clean_text(text, lowercase=config.lowercase)


def render_passage(trace: StackTrace, config: PreprocessConfig,
                   source: tuple[str, int] = ("", 0)) -> Passage:
    """Emit one sentence per frame, prefixed with its 1-based position marker.

    A Java exception header, when present and enabled, becomes sentence 0
    with the marker ``exc``; it does not count toward frame_count.
    """
    sentences: list[str] = []
    if (config.include_exception_header and trace.language == "java"
            and trace.exception_header):
        header = clean_text(trace.exception_header, lowercase=config.lowercase)
        if header:
            sentences.append(f"exc {header}.")
    count = 0
    for k, frame in enumerate(trace.frames, start=1):
        body = clean_frame(frame, config)
        sentence = f"f{k} {body}." if body else f"f{k}."
        sentences.append(sentence)
        count += 1
    return Passage(text=" ".join(sentences), frame_count=count, source=source)


def preprocess(trace: StackTrace, config: PreprocessConfig,
               source: tuple[str, int] = ("", 0)) -> Passage:
    """Full pipeline: dedup -> top-N -> clean -> positional coding."""
    trace = remove_consecutive_duplicates(trace)
    trace = take_top_frames(trace, config.top_n)
    return render_passage(trace, config, source=source)


def write_passage_file(passages, path) -> None:
    """Line-delimited handoff format: ``<report_id>#<trace_index>\\t<text>``."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(f"{p.key}\t{p.text}\n")


def read_passage_file(path) -> list[Passage]:
    passages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                key, text = line.split("\t", 1)
                report_id, trace_index = key.rsplit("#", 1)
                idx = int(trace_index)
            except ValueError as exc:
                raise ValueError(f"malformed passage line {lineno}: {line!r}") from exc
            markers = re.findall(r"(?:^| )f\d+ ", text + " ")
            passages.append(Passage(text=text, frame_count=len(markers),
                                    source=(report_id, idx)))
    return passages
