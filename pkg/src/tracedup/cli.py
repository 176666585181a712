"""Command-line entry point.

Global flags (before the subcommand) come from an optional flat key=value
config file plus overrides:

    tracedup --config run.cfg --seed 7 evaluate --out-dir results/

Subcommands: ingest, split, preprocess, train-encoder, embed, train-ranker,
evaluate, query, synth.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import (chronological_split, convert_tracker_dump, generate_encoder_pairs,
                     generate_ranker_triplets, ingest_corpus, synth_corpus,
                     write_corpus_file)
from .embed import BuiltinEncoder, EncoderTrainConfig, train_encoder
from .harness import (ExperimentConfig, load_config_file, run_experiment,
                      run_split_sweep)
from .preprocess import write_passage_file
from .ranker import (RankerTrainConfig, config_fingerprint, load_model,
                     rank_candidates, save_model, train_ranker)
from .report import (emit_run_artifacts, render_sweep_figure, write_metrics_csv,
                     write_sweep_csv)
from .store import VectorStore
from .harness import build_passages


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracedup",
                                     description="Stack-trace crash deduplication engine")
    parser.add_argument("--version", action="version", version=f"tracedup {__version__}")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--method", choices=("dedupt", "nw", "prefix", "tfidf"))
    parser.add_argument("--trim", choices=("l0", "l1", "l2"),
                        help="java frame trimming level")
    parser.add_argument("--top-n", type=int, dest="top_n",
                        help="frames kept per trace")
    parser.add_argument("--agg", choices=("max", "mean", "pmm", "attn"),
                        help="multi-trace aggregation mode")
    parser.add_argument("--store", help="vector store path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load/convert a corpus file and print statistics")
    p.add_argument("--input", required=True)
    p.add_argument("--language", choices=("java", "cpp"), default="java")
    p.add_argument("--from-tracker", action="store_true",
                   help="convert a public issue-tracker dump first")
    p.add_argument("--output", help="write the normalized corpus here")

    p = sub.add_parser("split", help="print chronological split sizes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--language", choices=("java", "cpp"), default="java")
    p.add_argument("--train-days", type=int, required=True)
    p.add_argument("--val-days", type=int, required=True)
    p.add_argument("--test-days", type=int, required=True)

    p = sub.add_parser("preprocess", help="render traces to a passage file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--language", choices=("java", "cpp"), default="java")
    p.add_argument("--output", required=True)

    p = sub.add_parser("train-encoder", help="contrastively fit the built-in encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True, help="encoder weights (.npz)")
    p.add_argument("--export-pairs", help="also write the training pairs (JSONL)")

    p = sub.add_parser("embed", help="embed all passages into a vector store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--encoder", help="trained encoder weights; default untrained")

    p = sub.add_parser("train-ranker", help="train the duplicate classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True, help="model checkpoint path")

    p = sub.add_parser("evaluate", help="full experiment: train, rank, metrics, artifacts")
    p.add_argument("--corpus")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--no-figures", action="store_true", help="emit CSV only")
    p.add_argument("--sweep-splits",
                   help="semicolon-separated train,val,test day triples")

    p = sub.add_parser("query", help="rank duplicate buckets for one report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report-id", required=True)
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--buckets", type=int, default=100)
    p.add_argument("--reports-per-bucket", type=int, default=4)
    p.add_argument("--vocab", type=int, default=40)
    p.add_argument("--mutation", type=float, default=0.3)
    p.add_argument("--traces-per-report", type=int, default=1)
    p.add_argument("--day-span", type=int, default=100)
    p.add_argument("--language", choices=("java", "cpp"), default="java")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    values = load_config_file(args.config) if args.config else {}
    if getattr(args, "corpus", None):
        values["corpus_path"] = args.corpus
    if getattr(args, "language", None):
        values["language"] = args.language
    if args.seed is not None:
        values["seed"] = args.seed
    if args.method:
        values["method"] = args.method
    if args.trim:
        values["trim_level"] = args.trim.upper()
    if args.top_n is not None:
        values["top_n"] = args.top_n
    if args.agg:
        values["agg_mode"] = args.agg
    return ExperimentConfig(**values)


def _load(config: ExperimentConfig):
    corpus = ingest_corpus(config.corpus_path, config.language)
    split = chronological_split(corpus, config.train_days, config.val_days,
                                config.test_days)
    return corpus, split


def _cmd_ingest(args) -> int:
    path = args.input
    if args.from_tracker:
        if not args.output:
            print("--from-tracker requires --output", file=sys.stderr)
            return 2
        count = convert_tracker_dump(args.input, args.output)
        print(f"converted {count} tracker records -> {args.output}")
        path = args.output
    corpus = ingest_corpus(path, args.language)
    multi = corpus.multi_trace_fraction() * 100.0
    print(f"reports:      {len(corpus)}")
    print(f"buckets:      {len(corpus.buckets)}")
    print(f"duplicates:   {corpus.duplicate_count()}")
    print(f"multi-trace:  {multi:.2f}%")
    print(f"day span:     {corpus.day_span}")
    if args.output and not args.from_tracker:
        write_corpus_file(corpus, args.output)
        print(f"normalized corpus -> {args.output}")
    return 0


def _cmd_split(args, config: ExperimentConfig) -> int:
    corpus = ingest_corpus(args.corpus, args.language)
    split = chronological_split(corpus, args.train_days, args.val_days, args.test_days)
    for name in ("train", "val", "test"):
        interval = getattr(split, f"{name}_days")
        members = getattr(split, name)
        print(f"{name}: days [{interval[0]}, {interval[1]}) -> {len(members)} reports")
    print(f"out of range: {len(split.out_of_range)} reports")
    return 0


def _cmd_preprocess(args, config: ExperimentConfig) -> int:
    corpus = ingest_corpus(args.corpus, config.language)
    passages = build_passages(corpus, config.preprocess_config())
    write_passage_file((passages[k] for k in sorted(passages)), args.output)
    print(f"{len(passages)} passages -> {args.output}")
    return 0


def _cmd_train_encoder(args, config: ExperimentConfig) -> int:
    corpus, split = _load(config)
    pre = config.preprocess_config()
    pairs = generate_encoder_pairs(corpus, split, pre,
                                   negatives_per_anchor=config.negatives_per_anchor,
                                   seed=config.seed)
    passages = build_passages(corpus, pre)
    texts = {k: p.text for k, p in passages.items()}
    if args.export_pairs:
        with open(args.export_pairs, "w", encoding="utf-8") as fh:
            for pair in pairs:
                fh.write(json.dumps({
                    "anchor": pair.anchor.key, "other": pair.other.key,
                    "label": pair.label,
                    "anchor_text": texts[pair.anchor.key],
                    "other_text": texts[pair.other.key],
                }, sort_keys=True) + "\n")
        print(f"{len(pairs)} pairs -> {args.export_pairs}")
    encoder = BuiltinEncoder(dim=config.embed_dim, vocab_buckets=config.vocab_buckets,
                             seed=config.seed)
    enc_config = EncoderTrainConfig(scale=config.encoder_scale,
                                    batch_size=config.encoder_batch_size,
                                    epochs=config.encoder_epochs,
                                    learning_rate=config.encoder_lr, seed=config.seed)
    bucket_ids = {r.report_id: r.bucket_id for r in corpus.reports.values()}
    encoder, losses = train_encoder(pairs, texts, enc_config, encoder=encoder,
                                    bucket_ids=bucket_ids)
    encoder.save(args.output)
    first = losses[0] if losses else float("nan")
    last = losses[-1] if losses else float("nan")
    print(f"trained on {len(pairs)} pairs, {len(losses)} steps, "
          f"loss {first:.4f} -> {last:.4f}")
    print(f"encoder -> {args.output}")
    return 0


def _cmd_embed(args, config: ExperimentConfig, store_path: str | None) -> int:
    if not store_path:
        print("embed requires --store", file=sys.stderr)
        return 2
    corpus = ingest_corpus(args.corpus, config.language)
    encoder = (BuiltinEncoder.load(args.encoder) if args.encoder
               else BuiltinEncoder(dim=config.embed_dim,
                                   vocab_buckets=config.vocab_buckets,
                                   seed=config.seed))
    passages = build_passages(corpus, config.preprocess_config())
    store = VectorStore(dimension=encoder.dim, provenance=encoder.name)
    for key in sorted(passages):
        store.put(key, encoder.embed(passages[key].text))
    store.save(store_path)
    print(f"{len(store)} vectors (d={store.dimension}) -> {store_path}")
    return 0


def _cmd_train_ranker(args, config: ExperimentConfig, store_path: str | None) -> int:
    if not store_path:
        print("train-ranker requires --store", file=sys.stderr)
        return 2
    corpus, split = _load(config)
    store = VectorStore.load(store_path)
    triplets = generate_ranker_triplets(corpus, split, config.preprocess_config(),
                                        seed=config.seed + 1,
                                        triplets_per_anchor=config.triplets_per_anchor)
    rk_config = RankerTrainConfig(batch_size=config.ranker_batch_size,
                                  learning_rate=config.ranker_lr,
                                  epochs=config.ranker_epochs, seed=config.seed,
                                  patience=config.patience)
    model, log = train_ranker(triplets, store, rk_config, agg_mode=config.agg_mode,
                              embed_dim=store.dimension)
    save_model(model, args.output, config_hash=config_fingerprint(config.as_dict()))
    print(f"trained on {len(triplets)} triplets over {len(log['epoch_loss'])} epochs")
    print(f"model -> {args.output}")
    return 0


def _parse_sweep(text: str) -> list[tuple[int, int, int]]:
    triples = []
    for part in text.split(";"):
        days = tuple(int(x) for x in part.split(","))
        if len(days) != 3:
            raise ValueError(f"bad sweep triple {part!r}")
        triples.append(days)
    return triples


def _cmd_evaluate(args, config: ExperimentConfig) -> int:
    out_dir = Path(args.out_dir)
    figures = not args.no_figures
    if args.sweep_splits:
        splits = _parse_sweep(args.sweep_splits)
        results, summary = run_split_sweep(config, splits)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = list(zip(splits, [r.report for r in results]))
        write_sweep_csv(rows, summary, out_dir)
        write_metrics_csv([r.report for r in results], out_dir)
        if figures:
            render_sweep_figure(rows, out_dir)
        print(f"sweep of {len(splits)} splits -> {out_dir}")
        print(f"mrr mean {summary['mrr_mean']:.4f} sd {summary['mrr_sd']:.4f}")
        return 0
    artifacts = run_experiment(config)
    written = emit_run_artifacts(artifacts, out_dir, figures=figures)
    print(artifacts.report.canonical_text(), end="")
    print(f"median query time: {artifacts.report.median_query_seconds * 1000:.2f} ms")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_query(args, config: ExperimentConfig, store_path: str | None) -> int:
    if not store_path:
        print("query requires --store", file=sys.stderr)
        return 2
    corpus = ingest_corpus(args.corpus, config.language)
    store = VectorStore.load(store_path)
    model, _ = load_model(args.model)
    query = corpus.reports.get(args.report_id)
    if query is None:
        print(f"unknown report id {args.report_id!r}", file=sys.stderr)
        return 2
    candidates = [r for r in corpus.reports.values()
                  if r.timestamp_day < query.timestamp_day
                  and r.report_id != query.report_id]
    if not candidates:
        print("no earlier reports to rank against", file=sys.stderr)
        return 1
    result = rank_candidates(query, candidates, model, store)
    print(f"query {query.report_id} (bucket {query.bucket_id})")
    for rank, (bucket_id, score) in enumerate(result.buckets[: args.k], start=1):
        marker = " *" if bucket_id == query.bucket_id else ""
        print(f"{rank:3d}. {bucket_id}  {score:+.4f}{marker}")
    if result.true_bucket_rank:
        print(f"true bucket rank: {result.true_bucket_rank}")
    return 0


def _cmd_synth(args, seed: int) -> int:
    corpus = synth_corpus(args.buckets, args.reports_per_bucket, args.vocab,
                          args.mutation, seed,
                          traces_per_report=args.traces_per_report,
                          day_span=args.day_span, language=args.language)
    write_corpus_file(corpus, args.output)
    print(f"{len(corpus)} reports in {len(corpus.buckets)} buckets -> {args.output}")
    print(f"corpus hash: {corpus.content_hash()[:16]}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "synth":
            return _cmd_synth(args, args.seed if args.seed is not None else 0)
        config = _experiment_config(args)
        if args.command == "split":
            return _cmd_split(args, config)
        if args.command == "preprocess":
            return _cmd_preprocess(args, config)
        if args.command == "train-encoder":
            return _cmd_train_encoder(args, config)
        if args.command == "embed":
            return _cmd_embed(args, config, args.store)
        if args.command == "train-ranker":
            return _cmd_train_ranker(args, config, args.store)
        if args.command == "evaluate":
            return _cmd_evaluate(args, config)
        if args.command == "query":
            return _cmd_query(args, config, args.store)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
