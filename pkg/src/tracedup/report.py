"""Run artifacts: canonical report text, CSV tables, and rendered figures.

Figures land next to the delimited output as PNG files; pass
``figures=False`` to emit CSV only.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import ExperimentArtifacts

RETRIEVAL_COLUMNS = ["method", "mrr", "rr1", "rr5", "rr10", "roc_auc"]


def write_report_text(artifacts: ExperimentArtifacts, out_dir: Path) -> Path:
    path = out_dir / "report.txt"
    path.write_text(artifacts.report.canonical_text(), encoding="utf-8")
    return path


def write_per_query_csv(artifacts: ExperimentArtifacts, out_dir: Path) -> Path:
    path = out_dir / "per_query.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "has_true_duplicate", "true_bucket_rank",
                         "reciprocal_rank", "top1_score"])
        for o in artifacts.outcomes:
            rr = 1.0 / o.true_bucket_rank if o.true_bucket_rank else 0.0
            writer.writerow([o.query_id, int(o.has_true_duplicate),
                             o.true_bucket_rank if o.true_bucket_rank else "",
                             f"{rr:.6f}", f"{o.top1_score:.6f}"])
    return path


def write_metrics_csv(reports, out_dir: Path, name: str = "metrics.csv") -> Path:
    path = out_dir / name
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RETRIEVAL_COLUMNS + ["median_query_seconds"])
        for report in reports:
            writer.writerow([
                report.method,
                f"{report.mrr:.6f}", f"{report.rr1:.6f}",
                f"{report.rr5:.6f}", f"{report.rr10:.6f}",
                "" if report.roc_auc is None else f"{report.roc_auc:.6f}",
                f"{report.median_query_seconds:.6f}",
            ])
    return path


def write_sweep_csv(rows, summary, out_dir: Path) -> Path:
    """Time-split sweep table: one row per split plus mean/SD rows."""
    path = out_dir / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_days", "val_days", "test_days", "mrr", "rr1"])
        for (train_days, val_days, test_days), report in rows:
            writer.writerow([train_days, val_days, test_days,
                             f"{report.mrr:.6f}", f"{report.rr1:.6f}"])
        writer.writerow(["mean", "", "", f"{summary['mrr_mean']:.6f}",
                         f"{summary['rr1_mean']:.6f}"])
        writer.writerow(["sd", "", "", f"{summary['mrr_sd']:.6f}",
                         f"{summary['rr1_sd']:.6f}"])
    return path


def render_metric_figure(artifacts: ExperimentArtifacts, out_dir: Path) -> Path:
    report = artifacts.report
    labels = ["MRR", "RR@1", "RR@5", "RR@10"]
    values = [report.mrr, report.rr1, report.rr5, report.rr10]
    if report.roc_auc is not None:
        labels.append("ROC-AUC")
        values.append(report.roc_auc)
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(labels, values, color="#4878d0")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"Retrieval metrics ({report.method})")
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.3f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    path = out_dir / "metrics.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_pair_distance_figure(artifacts: ExperimentArtifacts, out_dir: Path) -> Path | None:
    """Cosine-distance histograms of labeled pairs before and after adaptation."""
    if not artifacts.pair_distances:
        return None
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, stage in zip(axes, ("before", "after")):
        pos, neg = artifacts.pair_distances[stage]
        bins = np.linspace(0.0, 2.0, 41)
        ax.hist(pos, bins=bins, alpha=0.6, label="duplicate pairs", color="#2ca02c")
        ax.hist(neg, bins=bins, alpha=0.6, label="non-duplicate pairs", color="#d62728")
        ax.set_title(f"{stage} adaptation")
        ax.set_xlabel("cosine distance")
    axes[0].set_ylabel("pairs")
    axes[0].legend()
    fig.tight_layout()
    path = out_dir / "pair_distances.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep_figure(rows, out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [train_days for (train_days, _, _), _ in rows]
    ax.plot(xs, [r.mrr for _, r in rows], marker="o", label="MRR")
    ax.plot(xs, [r.rr1 for _, r in rows], marker="s", label="RR@1")
    ax.set_xlabel("training days")
    ax.set_ylabel("score")
    ax.set_title("Time-split sensitivity")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "sweep.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def emit_run_artifacts(artifacts: ExperimentArtifacts, out_dir,
                       figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        write_report_text(artifacts, out_dir),
        write_per_query_csv(artifacts, out_dir),
        write_metrics_csv([artifacts.report], out_dir),
    ]
    if figures:
        written.append(render_metric_figure(artifacts, out_dir))
        pair_fig = render_pair_distance_figure(artifacts, out_dir)
        if pair_fig:
            written.append(pair_fig)
    return written
