import json

import pytest

from tracedup.cli import main
from tracedup.store import VectorStore


@pytest.fixture
def synth_file(tmp_path):
    path = tmp_path / "corpus.jsonl"
    code = main(["--seed", "5", "synth", "--output", str(path), "--buckets", "20",
                 "--reports-per-bucket", "3", "--vocab", "16", "--mutation", "0.25",
                 "--day-span", "100"])
    assert code == 0
    return path


def test_synth_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert main(["--seed", "9", "synth", "--output", str(path),
                     "--buckets", "5", "--vocab", "10"]) == 0
    assert a.read_text() == b.read_text()


def test_ingest_prints_statistics(synth_file, capsys):
    assert main(["ingest", "--input", str(synth_file)]) == 0
    out = capsys.readouterr().out
    assert "reports:      60" in out
    assert "buckets:      20" in out


def test_split_command(synth_file, capsys):
    assert main(["split", "--corpus", str(synth_file), "--train-days", "24",
                 "--val-days", "8", "--test-days", "8"]) == 0
    out = capsys.readouterr().out
    assert "train: days [0, 24)" in out
    assert "out of range" in out


def test_preprocess_writes_passages(synth_file, tmp_path, capsys):
    out_file = tmp_path / "passages.tsv"
    assert main(["preprocess", "--corpus", str(synth_file),
                 "--output", str(out_file)]) == 0
    lines = out_file.read_text().strip().splitlines()
    assert len(lines) == 60
    key, text = lines[0].split("\t", 1)
    assert "#" in key
    assert text.startswith("f1 ")


def test_full_cli_pipeline(synth_file, tmp_path, capsys):
    encoder_path = tmp_path / "encoder.npz"
    pairs_path = tmp_path / "pairs.jsonl"
    store_path = tmp_path / "vectors.dtvs"
    model_path = tmp_path / "model.ckpt"
    config_path = tmp_path / "run.cfg"
    config_path.write_text(
        "train_days = 24\nval_days = 8\ntest_days = 8\n"
        "embed_dim = 32\nvocab_buckets = 4096\nencoder_epochs = 1\n"
        "encoder_lr = 0.02\nranker_epochs = 2\ntriplets_per_anchor = 1\n"
        f"corpus_path = {synth_file}\n",
        encoding="utf-8")

    assert main(["--config", str(config_path), "--seed", "5", "train-encoder",
                 "--corpus", str(synth_file), "--output", str(encoder_path),
                 "--export-pairs", str(pairs_path)]) == 0
    assert encoder_path.exists()
    pair_lines = [json.loads(l) for l in pairs_path.read_text().splitlines()]
    assert {p["label"] for p in pair_lines} == {"positive", "negative"}
    assert all("anchor_text" in p for p in pair_lines)

    assert main(["--config", str(config_path), "--seed", "5", "--store",
                 str(store_path), "embed", "--corpus", str(synth_file),
                 "--encoder", str(encoder_path)]) == 0
    store = VectorStore.load(store_path)
    assert len(store) == 60
    assert store.dimension == 32

    assert main(["--config", str(config_path), "--seed", "5", "--store",
                 str(store_path), "train-ranker", "--corpus", str(synth_file),
                 "--output", str(model_path)]) == 0
    assert model_path.exists()

    report_id = pair_lines[0]["anchor"].split("#")[0]
    assert main(["--config", str(config_path), "--store", str(store_path),
                 "query", "--corpus", str(synth_file), "--model", str(model_path),
                 "--report-id", report_id]) in (0, 1)


def test_evaluate_writes_artifacts(synth_file, tmp_path, capsys):
    out_dir = tmp_path / "results"
    assert main(["--seed", "3", "--method", "tfidf", "evaluate",
                 "--corpus", str(synth_file), "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "report.txt").exists()
    assert (out_dir / "per_query.csv").exists()
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "metrics.png").exists()
    header = (out_dir / "per_query.csv").read_text().splitlines()[0]
    assert header.startswith("query_id,")


def test_evaluate_no_figures(synth_file, tmp_path):
    out_dir = tmp_path / "results"
    assert main(["--seed", "3", "--method", "tfidf", "evaluate",
                 "--corpus", str(synth_file), "--out-dir", str(out_dir),
                 "--no-figures"]) == 0
    assert (out_dir / "report.txt").exists()
    assert not (out_dir / "metrics.png").exists()


def test_evaluate_sweep(synth_file, tmp_path):
    out_dir = tmp_path / "sweep"
    assert main(["--seed", "3", "--method", "tfidf", "evaluate",
                 "--corpus", str(synth_file), "--out-dir", str(out_dir),
                 "--sweep-splits", "20,8,8;24,8,8"]) == 0
    assert (out_dir / "sweep.csv").exists()
    assert (out_dir / "sweep.png").exists()
    lines = (out_dir / "sweep.csv").read_text().splitlines()
    assert lines[0] == "train_days,val_days,test_days,mrr,rr1"
    assert lines[-2].startswith("mean")
    assert lines[-1].startswith("sd")


def test_cli_reports_errors_cleanly(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    code = main(["ingest", "--input", str(missing)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_trim_flag_validation(synth_file, tmp_path):
    # cpp corpus with java-only trimming level fails with a config error
    code = main(["--trim", "l2", "preprocess", "--corpus", str(synth_file),
                 "--language", "cpp", "--output", str(tmp_path / "p.tsv")])
    assert code == 1
