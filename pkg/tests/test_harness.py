import pytest

from tracedup.corpus import synth_corpus, write_corpus_file
from tracedup.harness import (ExperimentConfig, EvalReport, load_config_file,
                              run_experiment, run_split_sweep)


@pytest.fixture(scope="module")
def tiny_corpus():
    return synth_corpus(25, 3, frame_vocab=18, mutation_rate=0.25, seed=8,
                        day_span=40)


def quick_config(**overrides):
    defaults = dict(method="tfidf", train_days=24, val_days=6, test_days=10,
                    seed=3)
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


def test_tfidf_run_records_no_training_stages(tiny_corpus):
    artifacts = run_experiment(quick_config(), corpus=tiny_corpus)
    report = artifacts.report
    assert report.method == "tfidf"
    assert "train-encoder" not in report.stages
    assert "train-ranker" not in report.stages
    assert {"split", "preprocess", "rank"} <= set(report.stages)
    assert 0.0 <= report.mrr <= 1.0
    assert report.rr1 <= report.rr5 <= report.rr10
    assert report.rr1 <= report.mrr <= 1.0
    assert report.embedding_before is None


def test_run_is_deterministic(tiny_corpus):
    a = run_experiment(quick_config(), corpus=tiny_corpus)
    b = run_experiment(quick_config(), corpus=tiny_corpus)
    assert a.report.canonical_text() == b.report.canonical_text()
    assert [o.__dict__ for o in a.outcomes] == [o.__dict__ for o in b.outcomes]


def test_dedupt_run_records_training_stages(tiny_corpus):
    config = quick_config(method="dedupt", embed_dim=32, vocab_buckets=4096,
                          encoder_epochs=1, encoder_lr=0.02, ranker_epochs=2,
                          triplets_per_anchor=1, max_val_queries=10)
    artifacts = run_experiment(config, corpus=tiny_corpus)
    report = artifacts.report
    assert {"train-encoder", "embed", "train-ranker"} <= set(report.stages)
    assert report.embedding_before is not None
    assert report.embedding_after is not None
    assert artifacts.pair_distances is not None
    assert artifacts.store is not None and len(artifacts.store) == sum(
        len(r.traces) for r in tiny_corpus.reports.values())


def test_nw_and_prefix_methods_run(tiny_corpus):
    for method in ("nw", "prefix"):
        artifacts = run_experiment(quick_config(method=method, test_days=4,
                                                train_days=30, val_days=6),
                                   corpus=tiny_corpus)
        assert artifacts.report.method == method


def test_canonical_text_excludes_timing(tiny_corpus):
    artifacts = run_experiment(quick_config(), corpus=tiny_corpus)
    artifacts.report.median_query_seconds = 123.456
    text = artifacts.report.canonical_text()
    assert "123.456" not in text
    assert "median" not in text


def test_split_sweep_summary(tiny_corpus):
    splits = [(20, 6, 10), (24, 6, 10), (28, 6, 6)]
    results, summary = run_split_sweep(quick_config(), splits, corpus=tiny_corpus)
    assert len(results) == 3
    assert set(summary) == {"mrr_mean", "mrr_sd", "rr1_mean", "rr1_sd"}
    mrrs = [r.report.mrr for r in results]
    assert summary["mrr_mean"] == pytest.approx(sum(mrrs) / 3)


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "method = tfidf\n"
        "train_days = 12\n"
        "encoder_lr = 0.5\n"
        "lowercase = false\n",
        encoding="utf-8")
    values = load_config_file(path)
    assert values == {"method": "tfidf", "train_days": 12,
                      "encoder_lr": 0.5, "lowercase": False}
    config = ExperimentConfig(**values)
    assert config.train_days == 12


def test_config_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("no_such_key = 1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no_such_key"):
        load_config_file(path)


def test_unknown_method_rejected():
    with pytest.raises(ValueError, match="unknown method"):
        ExperimentConfig(method="magic")


def test_experiment_from_file(tmp_path, tiny_corpus):
    corpus_path = tmp_path / "corpus.jsonl"
    write_corpus_file(tiny_corpus, corpus_path)
    config = quick_config(corpus_path=str(corpus_path))
    artifacts = run_experiment(config)
    assert "ingest" in artifacts.report.stages
    assert artifacts.report.n_reports == len(tiny_corpus)
