"""Figure rendering for the report path: every chart lands next to a CSV of
the plotted data so downstream tooling can re-draw it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .artifacts import write_csv
from .bench import BenchmarkReport, PromptStats
from .consensus import DatasetStats, DistortionType
from .metrics import MetricsReport
from .training import TrainHistory


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_corpus_stats(stats: DatasetStats, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(4, 3))
    rates = [stats.positive_rate, 1.0 - stats.positive_rate]
    ax.bar(["positive", "negative"], rates, color=["#d1495b", "#8d99ae"])
    ax.set_ylabel("fraction of samples")
    ax.set_ylim(0, 1)
    ax.set_title("Samples with distorted regions")
    written.append(_save(fig, out / "positive_rate.png"))
    write_csv(out / "positive_rate.csv", ["label", "fraction"],
              [{"label": "positive", "fraction": f"{rates[0]:.6f}"},
               {"label": "negative", "fraction": f"{rates[1]:.6f}"}])
    written.append(out / "positive_rate.csv")

    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [t.value for t in DistortionType]
    shares = [stats.type_distribution[t] for t in DistortionType]
    ax.bar(labels, shares, color="#2e6f95")
    ax.set_ylabel("share of typed regions")
    ax.set_title("Distortion type distribution")
    ax.tick_params(axis="x", rotation=30)
    written.append(_save(fig, out / "type_distribution.png"))
    write_csv(out / "type_distribution.csv", ["type", "share", "count"],
              [{"type": t.value, "share": f"{stats.type_distribution[t]:.6f}",
                "count": stats.type_counts[t]} for t in DistortionType])
    written.append(out / "type_distribution.csv")

    fig, ax = plt.subplots(figsize=(5, 3))
    edges = stats.area_bin_edges
    centers = (edges[:-1] + edges[1:]) / 2.0
    ax.bar(centers, stats.area_bin_counts, width=np.diff(edges) * 0.9, color="#52796f")
    ax.set_xlabel("relative distorted area")
    ax.set_ylabel("positive samples")
    ax.set_title("Relative area of distorted regions")
    written.append(_save(fig, out / "area_histogram.png"))
    write_csv(out / "area_histogram.csv", ["binStart", "binEnd", "count"],
              [{"binStart": f"{edges[i]:.6f}", "binEnd": f"{edges[i + 1]:.6f}",
                "count": int(stats.area_bin_counts[i])}
               for i in range(len(stats.area_bin_counts))])
    written.append(out / "area_histogram.csv")
    return written


def render_prompt_stats(stats: PromptStats, out_dir: str | Path, top_n: int = 25) -> list[Path]:
    out = Path(out_dir)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(5, 3))
    counts = sorted(stats.word_count_histogram.items())
    ax.bar([k for k, _ in counts], [v for _, v in counts], color="#3d5a80")
    ax.set_xlabel("words per prompt")
    ax.set_ylabel("prompts")
    ax.set_title("Prompt word counts")
    written.append(_save(fig, out / "word_counts.png"))
    write_csv(out / "word_counts.csv", ["wordCount", "prompts"],
              [{"wordCount": k, "prompts": v} for k, v in counts])
    written.append(out / "word_counts.csv")

    top = stats.top_words[:top_n]
    fig, ax = plt.subplots(figsize=(6, max(3, 0.22 * len(top))))
    ax.barh([w for w, _ in reversed(top)], [c for _, c in reversed(top)], color="#ee6c4d")
    ax.set_xlabel("occurrences")
    ax.set_title(f"Top {len(top)} prompt words")
    written.append(_save(fig, out / "top_words.png"))
    write_csv(out / "top_words.csv", ["word", "count"],
              [{"word": w, "count": c} for w, c in stats.top_words])
    written.append(out / "top_words.csv")
    return written


def render_benchmark(report: BenchmarkReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(5, 3))
    names = [r.model_name for r in report.models]
    rates = [r.non_distortion_rate for r in report.models]
    ax.bar(names, rates, color="#386641")
    ax.axhline(0.5, color="#bc4749", linestyle="--", linewidth=1)
    ax.set_ylabel("non-distortion rate")
    ax.set_ylim(0, 1)
    ax.set_title("Undistorted-image rate per model")
    ax.tick_params(axis="x", rotation=20)
    written.append(_save(fig, out / "non_distortion_rate.png"))
    write_csv(out / "non_distortion_rate.csv",
              ["model", "imageCount", "undistorted", "nonDistortionRate", "meanRelativeArea"],
              [{"model": r.model_name, "imageCount": r.image_count,
                "undistorted": r.undistorted_count,
                "nonDistortionRate": f"{r.non_distortion_rate:.6f}",
                "meanRelativeArea": f"{r.mean_relative_area:.6f}"} for r in report.models])
    written.append(out / "non_distortion_rate.csv")

    for result in report.models:
        fig, ax = plt.subplots(figsize=(5, 3))
        edges = result.area_bin_edges
        centers = (edges[:-1] + edges[1:]) / 2.0
        ax.bar(centers, result.area_bin_counts, width=np.diff(edges) * 0.9, color="#6a994e")
        ax.set_xlabel("predicted relative distorted area")
        ax.set_ylabel("images")
        ax.set_title(f"Distorted-area distribution: {result.model_name}")
        written.append(_save(fig, out / f"area_distribution_{result.model_name}.png"))
        write_csv(out / f"area_distribution_{result.model_name}.csv",
                  ["binStart", "binEnd", "count"],
                  [{"binStart": f"{edges[i]:.6f}", "binEnd": f"{edges[i + 1]:.6f}",
                    "count": int(result.area_bin_counts[i])}
                   for i in range(len(result.area_bin_counts))])
        written.append(out / f"area_distribution_{result.model_name}.csv")

    if report.prompt_stats is not None:
        written += render_prompt_stats(report.prompt_stats, out)
    return written


def render_history(history: TrainHistory, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 3))
    losses = [s["loss"] for s in history.steps]
    ax.plot(range(len(losses)), losses, linewidth=0.8, color="#1d3557")
    for stage in history.stages:
        ax.axvline(stage["startStep"], color="#a8a8a8", linestyle=":", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("Training loss")
    written.append(_save(fig, out / "loss.png"))
    write_csv(out / "loss.csv", ["step", "stage", "lr", "loss"],
              [{"step": i, "stage": s["stage"], "lr": f"{s['lr']:.3e}",
                "loss": f"{s['loss']:.6f}"} for i, s in enumerate(history.steps)])
    written.append(out / "loss.csv")

    val_points = [(i, e["valPixelF1"], e["stage"]) for i, e in enumerate(history.epochs)
                  if "valPixelF1" in e]
    if val_points:
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot([p[0] for p in val_points], [p[1] for p in val_points],
                marker="o", color="#e07a5f")
        ax.set_xlabel("epoch record")
        ax.set_ylabel("validation pixel F1")
        ax.set_ylim(0, 1)
        ax.set_title("Validation F1")
        written.append(_save(fig, out / "val_f1.png"))
        write_csv(out / "val_f1.csv", ["index", "stage", "valPixelF1"],
                  [{"index": p[0], "stage": p[2], "valPixelF1": f"{p[1]:.6f}"}
                   for p in val_points])
        written.append(out / "val_f1.csv")
    return written


def render_metrics(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(5, 3))
    ious = [m.iou for m in report.per_image]
    ax.hist(ious, bins=20, range=(0, 1), color="#457b9d")
    ax.set_xlabel("per-image IoU")
    ax.set_ylabel("images")
    ax.set_title(f"Per-image IoU (pixel F1 {report.pixel_f1:.3f})")
    written.append(_save(fig, out / "iou_histogram.png"))
    fields, rows = report.csv_rows()
    write_csv(out / "per_image_metrics.csv", fields, rows)
    written.append(out / "per_image_metrics.csv")
    return written
