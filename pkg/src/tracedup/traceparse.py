"""Extract structured stack frames from raw Java and gdb-style C/C++ crash text.

Both parsers are tolerant by design: tracker data interleaves prose, log
lines and partial traces, so anything that does not look like a frame is
skipped rather than failed. Frames whose subroutine name cannot be isolated
are dropped and counted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


@dataclass(frozen=True)
class StackFrame:
    """One call-stack entry. ``ordinal`` 0 is the topmost (crashing) frame."""

    ordinal: int
    function: str
    qualified_path: str = ""
    source_file: str = ""
    line: int | None = None
    raw: str = ""


@dataclass
class StackTrace:
    frames: list[StackFrame]
    exception_header: str = ""
    language: str = "java"

    def __post_init__(self):
        if not self.frames:
            raise ValueError("StackTrace requires at least one frame")


@dataclass
class ParseStats:
    """Counters for frames that matched a frame pattern but could not be structured."""

    dropped_frames: int = 0
    lines_skipped: int = 0


# at java.base/java.lang.Thread.run(Thread.java:829)
# at com.example.MyClass.myMethod(MyClass.java:10)
# at Foo.bar(Unknown Source)
_JAVA_FRAME_RE = re.compile(
    r"^\s*at\s+(?:([\w.$]+)/)?"  # optional module prefix, e.g. java.base/
    r"([\w.$<>\[\]]+)"  # qualified method, dots included
    r"\s*\(([^)]*)\)\s*$"
)
# Exception in thread "main" java.lang.NullPointerException: message
_JAVA_HEADER_RE = re.compile(
    r"^\s*(?:Exception in thread \"[^\"]*\"\s+)?"
    r"((?:[\w$]+\.)+[\w$]+)"  # dotted class name, at least one dot
    r"(:\s*.*)?$"
)
_JAVA_CAUSED_BY_RE = re.compile(r"^\s*Caused by:\s*(.*)$")
_JAVA_MORE_RE = re.compile(r"^\s*\.\.\.\s*\d+\s+more\s*$")
_JAVA_LOCATION_RE = re.compile(r"^(.*?):(\d+)$")

# #0  0x40990b in crash_func() at example.c:6
# #1  crash_func () at example.c:6
# #2  0xdead in _GI_abort ()
_GDB_FRAME_RE = re.compile(
    r"^\s*#(\d+)\s+(?:(0x[0-9a-fA-F]+)\s+in\s+)?(.+)$"
)
_GDB_AT_RE = re.compile(r"\)\s+at\s+([^\s:]+)(?::(\d+))?\s*$")
_GDB_FROM_RE = re.compile(r"\)\s+from\s+(\S+)\s*$")


def _java_split_qualified(qualified: str) -> tuple[str, str]:
    if "." in qualified:
        path, func = qualified.rsplit(".", 1)
    else:
        path, func = "", qualified
    return path, func


def _java_parse_location(location: str) -> tuple[str, int | None]:
    location = location.strip()
    if location in ("", "Unknown Source", "Native Method"):
        return "", None
    m = _JAVA_LOCATION_RE.match(location)
    if m:
        return m.group(1), int(m.group(2))
    return location, None


def parse_java(text: str, stats: ParseStats | None = None) -> list[StackTrace]:
    """Parse Java exception text into stack traces.

    Header lines (exception class + message) open a trace; ``at`` lines add
    frames; ``Caused by:`` chains become separate traces. Returns an empty
    list when no frames are found.
    """
    stats = stats if stats is not None else ParseStats()
    traces: list[StackTrace] = []
    header = ""
    pending_header = ""
    frames: list[StackFrame] = []

    def flush():
        nonlocal frames, header
        if frames:
            traces.append(StackTrace(frames=frames, exception_header=header, language="java"))
        frames = []
        header = ""

    for line in text.splitlines():
        m = _JAVA_FRAME_RE.match(line)
        if m:
            if not frames and pending_header:
                header = pending_header
            qualified = m.group(2)
            path, func = _java_split_qualified(qualified)
            if not func:
                stats.dropped_frames += 1
                continue
            source_file, lineno = _java_parse_location(m.group(3))
            frames.append(StackFrame(
                ordinal=len(frames),
                function=func,
                qualified_path=path,
                source_file=source_file,
                line=lineno,
                raw=line.strip(),
            ))
            continue
        caused = _JAVA_CAUSED_BY_RE.match(line)
        if caused:
            flush()
            pending_header = caused.group(1).strip()
            continue
        if _JAVA_MORE_RE.match(line):
            continue
        hm = _JAVA_HEADER_RE.match(line)
        if hm and line.strip():
            flush()
            pending_header = (hm.group(1) + (hm.group(2) or "")).strip()
            continue
        if line.strip():
            stats.lines_skipped += 1
    flush()
    return traces


def _gdb_parse_rest(rest: str) -> tuple[str, str, int | None] | None:
    """Split the post-address part of a gdb frame into (function, file, line)."""
    source_file = ""
    lineno: int | None = None
    m = _GDB_AT_RE.search(rest)
    if m:
        source_file = m.group(1)
        lineno = int(m.group(2)) if m.group(2) else None
        rest = rest[: m.start() + 1]
    else:
        m = _GDB_FROM_RE.search(rest)
        if m:
            rest = rest[: m.start() + 1]
    paren = rest.find("(")
    func = (rest[:paren] if paren != -1 else rest).strip()
    if not func or func.startswith("0x"):
        return None
    return func, source_file, lineno


def parse_gdb(text: str, stats: ParseStats | None = None) -> list[StackTrace]:
    """Parse gdb ``bt`` output into stack traces.

    A frame number that does not increase past the previous one starts a new
    trace, so ``thread apply all bt`` dumps split per thread. Memory
    addresses are dropped from the structured fields but stay in ``raw``.
    """
    stats = stats if stats is not None else ParseStats()
    traces: list[StackTrace] = []
    frames: list[StackFrame] = []
    prev_num = -1

    def flush():
        nonlocal frames, prev_num
        if frames:
            traces.append(StackTrace(frames=frames, language="cpp"))
        frames = []
        prev_num = -1

    for line in text.splitlines():
        m = _GDB_FRAME_RE.match(line)
        if not m:
            if line.strip():
                stats.lines_skipped += 1
            continue
        num = int(m.group(1))
        if num <= prev_num:
            flush()
        parsed = _gdb_parse_rest(m.group(3))
        if parsed is None:
            stats.dropped_frames += 1
            prev_num = num
            continue
        func, source_file, lineno = parsed
        path = ""
        if "::" in func:
            parts = [p for p in func.split("::") if p]
            if len(parts) > 1:
                path = ".".join(parts[:-1])
                func = parts[-1]
        frames.append(StackFrame(
            ordinal=len(frames),
            function=func,
            qualified_path=path,
            source_file=source_file,
            line=lineno,
            raw=line.strip(),
        ))
        prev_num = num
    flush()
    return traces


def detect_and_parse(text: str, stats: ParseStats | None = None) -> list[StackTrace]:
    """Try both parsers; the one recovering more frames wins, ties go to Java."""
    java = parse_java(text, stats)
    gdb = parse_gdb(text, stats)
    java_frames = sum(len(t.frames) for t in java)
    gdb_frames = sum(len(t.frames) for t in gdb)
    return gdb if gdb_frames > java_frames else java
