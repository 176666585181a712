import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GDB_CRASH, JAVA_NPE
from tracedup.traceparse import ParseStats, StackTrace, detect_and_parse, parse_gdb, parse_java


def test_java_reference_trace():
    traces = parse_java(JAVA_NPE)
    assert len(traces) == 1
    trace = traces[0]
    assert trace.exception_header == "java.lang.NullPointerException"
    assert trace.language == "java"
    assert [(f.qualified_path, f.function, f.source_file, f.line) for f in trace.frames] == [
        ("com.example.MyClass", "myMethod", "MyClass.java", 10),
        ("com.example.MyClass", "main", "MyClass.java", 5),
    ]


def test_java_empty_string():
    assert parse_java("") == []


def test_java_unknown_source():
    traces = parse_java("at Foo.bar(Unknown Source)")
    frame = traces[0].frames[0]
    assert frame.function == "bar"
    assert frame.source_file == ""
    assert frame.line is None


def test_java_native_method_and_module_prefix():
    text = (
        "java.lang.IllegalStateException: boom\n"
        "    at java.base/java.lang.Thread.sleep(Native Method)\n"
        "    at java.base/java.lang.Thread.run(Thread.java:829)\n"
    )
    trace = parse_java(text)[0]
    assert trace.exception_header == "java.lang.IllegalStateException: boom"
    assert trace.frames[0].function == "sleep"
    assert trace.frames[0].source_file == ""
    assert trace.frames[1].line == 829


def test_java_caused_by_splits_traces():
    text = (
        JAVA_NPE
        + "Caused by: java.io.IOException: disk\n"
        + "    at com.example.Io.read(Io.java:42)\n"
        + "    ... 2 more\n"
    )
    traces = parse_java(text)
    assert len(traces) == 2
    assert traces[1].exception_header == "java.io.IOException: disk"
    assert traces[1].frames[0].function == "read"


def test_java_interleaved_prose_skipped():
    stats = ParseStats()
    text = "some log line\n" + JAVA_NPE + "trailing noise\n"
    traces = parse_java(text, stats)
    assert len(traces) == 1
    assert len(traces[0].frames) == 2
    assert stats.lines_skipped >= 1


def test_gdb_reference_trace():
    traces = parse_gdb(GDB_CRASH)
    assert len(traces) == 1
    frames = traces[0].frames
    assert len(frames) == 3
    assert (frames[0].function, frames[0].source_file, frames[0].line) == (
        "crash_func", "example.c", 6)
    assert traces[0].language == "cpp"


def test_gdb_no_location():
    traces = parse_gdb("#0 0xdead in _GI_abort ()")
    frame = traces[0].frames[0]
    assert frame.function == "_GI_abort"
    assert frame.source_file == ""
    assert frame.line is None


def test_gdb_two_blocks_split():
    text = GDB_CRASH + GDB_CRASH
    traces = parse_gdb(text)
    assert len(traces) == 2
    assert all(len(t.frames) == 3 for t in traces)


def test_gdb_namespace_split():
    traces = parse_gdb("#1  0x1 in WelsDec::WelsReorderRefList (pCtx=0x7f) at m.cpp:252")
    frame = traces[0].frames[0]
    assert frame.qualified_path == "WelsDec"
    assert frame.function == "WelsReorderRefList"
    assert frame.line == 252


def test_gdb_from_library():
    traces = parse_gdb("#2  0x00400545 in helper () from /lib/libc.so.6")
    assert traces[0].frames[0].function == "helper"
    assert traces[0].frames[0].source_file == ""


def test_detect_dispatch():
    assert detect_and_parse(JAVA_NPE)[0].language == "java"
    assert detect_and_parse(GDB_CRASH)[0].language == "cpp"
    assert detect_and_parse("nothing to see here") == []


def test_raw_round_trip_preserves_frame_order():
    for parse, text in ((parse_java, JAVA_NPE), (parse_gdb, GDB_CRASH)):
        trace = parse(text)[0]
        raws = [f.raw for f in trace.frames]
        stripped = [line.strip() for line in text.splitlines()
                    if line.strip() in raws]
        assert raws == stripped


def test_reparse_idempotent_on_structured_fields():
    trace = parse_java(JAVA_NPE)[0]
    rendered = trace.exception_header + "\n" + "\n".join(f.raw for f in trace.frames)
    again = parse_java(rendered)[0]
    assert [(f.qualified_path, f.function, f.source_file, f.line) for f in again.frames] == \
        [(f.qualified_path, f.function, f.source_file, f.line) for f in trace.frames]
    assert again.exception_header == trace.exception_header


def test_empty_trace_type_rejected():
    with pytest.raises(ValueError):
        StackTrace(frames=[])


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=400))
def test_parsers_never_throw_on_arbitrary_text(text):
    for traces in (parse_java(text), parse_gdb(text), detect_and_parse(text)):
        for trace in traces:
            assert trace.frames
            for frame in trace.frames:
                assert frame.function
