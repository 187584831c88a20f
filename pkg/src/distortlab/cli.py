"""Command-line surface: corpus gen | corpus stats | consolidate | train |
eval | bench prompts | bench run | report.

Exit codes: 0 success, 1 validation error (bad config/arguments/inputs),
2 runtime failure. Every command prints the config digest and writes outputs
only under the configured output root.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    artifact_header,
    ensure_under_root,
    prepare_out_dir,
    read_jsonl,
    sha256_file,
    split_header,
    write_csv,
    write_jsonl,
)
from .bench import (
    MetaAttributes,
    PromptRecord,
    PromptStats,
    SOURCE_GENERATED,
    benchmark_models,
    generate_prompts,
    ingest_prompts,
    load_catalog,
    prompt_stats,
)
from .config import PipelineConfig, load_config
from .consensus import DatasetStats, DistortionType
from .corpus import (
    build_corpus,
    corpus_stats,
    load_corpus_manifest,
    load_split_samples,
    read_annotation_sets,
)
from .errors import (
    ConfigError,
    DivergenceError,
    InvalidBoxError,
    InvalidPolygonError,
    MissingPredictionError,
    NumericError,
    PipelineError,
)
from .masks import BinaryMask
from .metrics import MetricsReport, PredictionDirectory, evaluate
from .model import load_checkpoint, save_checkpoint
from .training import (
    TrainCorpus,
    TrainHistory,
    prepare_train_data,
    two_stage_train,
)

_VALIDATION_ERRORS = (
    ConfigError,
    InvalidBoxError,
    InvalidPolygonError,
    MissingPredictionError,
    FileNotFoundError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse from sys.exit(2)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="distortlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"distortlab {__version__}")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="pipeline config file (defaults when omitted)")
        p.add_argument("--out", help="output subdirectory under the configured output root")
        p.add_argument("--force", action="store_true", help="allow overwriting prior outputs")

    corpus = sub.add_parser("corpus", help="synthetic corpus commands")
    corpus_sub = corpus.add_subparsers(dest="subcommand")
    gen = corpus_sub.add_parser("gen", help="generate the synthetic corpus")
    common(gen)
    gen.add_argument("--jobs", type=int, default=1, help="parallel sample generation workers")
    stats = corpus_sub.add_parser("stats", help="dataset statistics from a corpus")
    common(stats)
    stats.add_argument("--corpus", help="corpus directory (default: <root>/corpus)")

    consolidate = sub.add_parser("consolidate", help="re-run consensus from annotation files")
    common(consolidate)
    consolidate.add_argument("--corpus", required=True, help="corpus directory")

    train = sub.add_parser("train", help="two-stage curriculum training")
    common(train)
    train.add_argument("--corpus", help="corpus directory (default: <root>/corpus)")

    evaluate_p = sub.add_parser("eval", help="score a predictor on a corpus split")
    common(evaluate_p)
    evaluate_p.add_argument("--corpus", help="corpus directory (default: <root>/corpus)")
    evaluate_p.add_argument("--split", default="test", choices=("train", "val", "test"))
    evaluate_p.add_argument("--checkpoint", help="model checkpoint to score")
    evaluate_p.add_argument("--predictions", help="directory of external prediction files")

    bench = sub.add_parser("bench", help="benchmark harness commands")
    bench_sub = bench.add_subparsers(dest="subcommand")
    prompts = bench_sub.add_parser("prompts", help="emit the benchmark prompt suite")
    common(prompts)
    run = bench_sub.add_parser("run", help="score generated-image directories")
    common(run)
    run.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    run.add_argument("--images", nargs="+", required=True, metavar="NAME=DIR",
                     help="one or more model-name=image-directory pairs")
    run.add_argument("--prompts", help="prompts artifact for prompt statistics")

    report = sub.add_parser("report", help="render figures and CSVs from artifacts")
    common(report)
    report.add_argument("--corpus", help="corpus directory to summarize")
    report.add_argument("--history", help="training history artifact")
    report.add_argument("--metrics", help="metrics artifact")
    report.add_argument("--bench", help="benchmark artifact")
    report.add_argument("--prompts", help="prompts artifact")
    return parser


def _load(args) -> PipelineConfig:
    config = load_config(args.config)
    print(f"config digest {config.digest()}")
    return config


def _out_dir(config: PipelineConfig, args, default: str) -> Path:
    sub = args.out if args.out else default
    target = ensure_under_root(config.output_root, sub)
    return prepare_out_dir(target, force=args.force)


def _corpus_dir(config: PipelineConfig, args) -> Path:
    if getattr(args, "corpus", None):
        return Path(args.corpus)
    return Path(config.output_root) / "corpus"


def _stats_records(stats: DatasetStats) -> list[dict]:
    return [
        {
            "record": "datasetStats",
            "sampleCount": stats.sample_count,
            "positiveCount": stats.positive_count,
            "positiveRate": stats.positive_rate,
            "typeCounts": {t.value: stats.type_counts[t] for t in DistortionType},
            "typeDistribution": {t.value: stats.type_distribution[t] for t in DistortionType},
            "areaBinEdges": [float(e) for e in stats.area_bin_edges],
            "areaBinCounts": [int(c) for c in stats.area_bin_counts],
        }
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_corpus_gen(args) -> int:
    config = _load(args)
    out = _out_dir(config, args, "corpus")
    manifest = build_corpus(config.corpus, out, config_digest=config.digest(),
                            jobs=max(1, args.jobs))
    print(f"corpus: {len(manifest.entries)} samples -> {out}")
    print(f"splits: {manifest.split_counts}")
    print(f"manifest digest {sha256_file(out / 'manifest.jsonl')}")
    return 0


def _cmd_corpus_stats(args) -> int:
    config = _load(args)
    manifest = load_corpus_manifest(_corpus_dir(config, args))
    stats = corpus_stats(manifest)
    out = _out_dir(config, args, "stats")
    header = artifact_header("dataset-stats", config.digest(), config.master_seed)
    write_jsonl(out / "stats.jsonl", [header] + _stats_records(stats))
    write_csv(out / "area_histogram.csv", ["binStart", "binEnd", "count"],
              [{"binStart": f"{stats.area_bin_edges[i]:.6f}",
                "binEnd": f"{stats.area_bin_edges[i + 1]:.6f}",
                "count": int(stats.area_bin_counts[i])}
               for i in range(len(stats.area_bin_counts))])
    print(f"positive rate {stats.positive_rate:.4f} over {stats.sample_count} samples")
    print(f"stats -> {out / 'stats.jsonl'}")
    return 0


def _cmd_consolidate(args) -> int:
    from .consensus import consolidate as consolidate_sets

    config = _load(args)
    manifest = load_corpus_manifest(Path(args.corpus))
    out = _out_dir(config, args, "consolidated")
    from .artifacts import write_mask_png

    records = [artifact_header("consolidation", config.digest(), config.master_seed)]
    for entry in manifest.entries:
        sets = read_annotation_sets(manifest.root / entry.annotations_path)
        size = config.corpus.image_size
        consensus, typed = consolidate_sets(sets, size, size)
        write_mask_png(out / "consensus_masks" / f"{entry.sample_id}.png", consensus.bits)
        records.append({
            "record": "sample",
            "sampleId": entry.sample_id,
            "consensusPixels": consensus.count,
            "regions": [
                {"type": dtype.value, "pixelCount": region.pixel_count,
                 "box": [region.bounding_box.x0, region.bounding_box.y0,
                         region.bounding_box.x1, region.bounding_box.y1]}
                for region, dtype in typed
            ],
        })
    write_jsonl(out / "consolidation.jsonl", records)
    print(f"consolidated {len(manifest.entries)} samples -> {out}")
    return 0


def _history_records(config: PipelineConfig, history: TrainHistory) -> list[dict]:
    header = artifact_header("train-history", config.digest(), config.master_seed)
    return [header] + history.to_records()


def _cmd_train(args) -> int:
    config = _load(args)
    manifest = load_corpus_manifest(_corpus_dir(config, args))
    out = _out_dir(config, args, "train")
    corpus = TrainCorpus(
        train=prepare_train_data(
            [(s.sample_id, s.image, s.consensus_mask)
             for s in load_split_samples(manifest, "train")]
        ),
        val=prepare_train_data(
            [(s.sample_id, s.image, s.consensus_mask)
             for s in load_split_samples(manifest, "val")]
        ),
    )
    model, history = two_stage_train(config.model, config.train, corpus)
    save_checkpoint(model, out / "model.vthd")
    write_jsonl(out / "history.jsonl", _history_records(config, history))
    print(f"chosen lr {history.chosen_lr:g}")
    print(f"checkpoint -> {out / 'model.vthd'}")
    return 0


def _cmd_eval(args) -> int:
    config = _load(args)
    if bool(args.checkpoint) == bool(args.predictions):
        raise ConfigError("pass exactly one of --checkpoint or --predictions")
    manifest = load_corpus_manifest(_corpus_dir(config, args))
    samples = load_split_samples(manifest, args.split)
    if args.checkpoint:
        source = load_checkpoint(args.checkpoint)
    else:
        source = PredictionDirectory(args.predictions)
    report = evaluate(source, samples, threshold=config.bench.prediction_threshold)
    out = _out_dir(config, args, "eval")
    header = artifact_header("metrics-report", config.digest(), config.master_seed)
    write_jsonl(out / "metrics.jsonl", [header] + report.to_records())
    fields, rows = report.csv_rows()
    write_csv(out / "metrics.csv", fields, rows)
    print(f"pixel P/R/F1 {report.pixel_precision:.4f}/{report.pixel_recall:.4f}/"
          f"{report.pixel_f1:.4f}  IoU {report.area_iou:.4f}  Dice {report.area_dice:.4f}")
    print(f"image P/R/F1 {report.image_precision:.4f}/{report.image_recall:.4f}/"
          f"{report.image_f1:.4f}")
    print(f"metrics -> {out / 'metrics.jsonl'}")
    return 0


def _cmd_bench_prompts(args) -> int:
    config = _load(args)
    out = _out_dir(config, args, "bench")
    catalog = load_catalog()
    generated = generate_prompts(
        config.bench.generated_count,
        seed=config.bench.seed,
        catalog=catalog,
        threshold=config.bench.self_check_threshold,
    )
    real_path = config.bench.real_prompts_file
    if not real_path:
        from .bench import _asset_path

        real_path = str(_asset_path("realworld_prompts.txt"))
    real = ingest_prompts(real_path)
    records = [artifact_header("prompt-suite", config.digest(), config.master_seed)]
    records += [p.to_record() for p in generated + real]
    write_jsonl(out / "prompts.jsonl", records)
    stats = prompt_stats(generated + real)
    total = sum(stats.word_count_histogram.values())
    print(f"prompts: {len(generated)} generated + {len(real)} ingested = "
          f"{len(generated) + len(real)} (word-count histogram totals {total})")
    print(f"prompts digest {sha256_file(out / 'prompts.jsonl')}")
    return 0


def load_prompt_artifact(path) -> list[PromptRecord]:
    header, rest = split_header(read_jsonl(path), "prompt-suite")
    prompts = []
    for record in rest:
        if record.get("record") != "prompt":
            continue
        attrs = record.get("attributes")
        prompts.append(
            PromptRecord(
                prompt_id=record["promptId"],
                text=record["text"],
                source=record["source"],
                attributes=MetaAttributes(
                    human_count=attrs["humanCount"],
                    age_group=attrs["ageGroup"],
                    gender=attrs["gender"],
                    artistic_style=attrs["artisticStyle"],
                    activity=attrs["activity"],
                    setting=attrs["setting"],
                ) if attrs else None,
                self_check_score=record.get("selfCheckScore"),
            )
        )
    return prompts


def _parse_image_dirs(pairs: list[str]) -> dict[str, str]:
    dirs: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--images expects NAME=DIR, got {pair!r}")
        name, _, directory = pair.partition("=")
        dirs[name] = directory
    return dirs


def _cmd_bench_run(args) -> int:
    config = _load(args)
    out = _out_dir(config, args, "bench-run")
    model = load_checkpoint(args.checkpoint)
    prompts = load_prompt_artifact(args.prompts) if args.prompts else None
    report = benchmark_models(
        _parse_image_dirs(args.images),
        model,
        threshold=config.bench.prediction_threshold,
        prompts=prompts,
    )
    records = [artifact_header("benchmark-report", config.digest(), config.master_seed)]
    records += report.to_records()
    write_jsonl(out / "benchmark.jsonl", records)
    for r in report.models:
        print(f"{r.model_name}: {r.image_count} images, "
              f"non-distortion rate {r.non_distortion_rate:.4f}")
        if r.skipped:
            print(f"  skipped unreadable: {', '.join(r.skipped)}")
    print(f"benchmark -> {out / 'benchmark.jsonl'}")
    return 0


def _cmd_report(args) -> int:
    from . import plots

    config = _load(args)
    out = _out_dir(config, args, "report")
    written: list[Path] = []

    if args.corpus:
        manifest = load_corpus_manifest(Path(args.corpus))
        written += plots.render_corpus_stats(corpus_stats(manifest), out)
    if args.history:
        history = _read_history(args.history)
        written += plots.render_history(history, out)
    if args.metrics:
        report = _read_metrics(args.metrics)
        written += plots.render_metrics(report, out)
    if args.bench:
        report = _read_benchmark(args.bench)
        written += plots.render_benchmark(report, out)
    if args.prompts:
        prompts = load_prompt_artifact(args.prompts)
        written += plots.render_prompt_stats(prompt_stats(prompts), out)
    if not written:
        raise ConfigError("report needs at least one of --corpus/--history/--metrics/"
                          "--bench/--prompts")
    for path in written:
        print(f"wrote {path}")
    return 0


def _read_history(path) -> TrainHistory:
    _, rest = split_header(read_jsonl(path), "train-history")
    history = TrainHistory()
    for record in rest:
        kind = record.pop("record", None)
        if kind == "summary":
            history.chosen_lr = record.get("chosenLr")
        elif kind == "lrOutcome":
            history.lr_outcomes.append(record)
        elif kind == "stage":
            history.stages.append(record)
        elif kind == "epoch":
            history.epochs.append(record)
        elif kind == "step":
            history.steps.append(record)
    return history


def _read_metrics(path) -> MetricsReport:
    from .metrics import PerImageMetrics

    _, rest = split_header(read_jsonl(path), "metrics-report")
    summary = next(r for r in rest if r.get("record") == "metrics")
    per_image = [
        PerImageMetrics(
            sample_id=r["sampleId"],
            iou=r["iou"],
            dice=r["dice"],
            predicted_positive=bool(r["predictedPositive"]),
            gt_positive=bool(r["gtPositive"]),
            predicted_relative_area=r["predictedRelativeArea"],
        )
        for r in rest
        if r.get("record") == "image"
    ]
    return MetricsReport(
        pixel_precision=summary["pixelPrecision"],
        pixel_recall=summary["pixelRecall"],
        pixel_f1=summary["pixelF1"],
        area_iou=summary["areaIoU"],
        area_dice=summary["areaDice"],
        image_precision=summary["imagePrecision"],
        image_recall=summary["imageRecall"],
        image_f1=summary["imageF1"],
        per_image=per_image,
    )


def _read_benchmark(path):
    from .bench import BenchmarkReport, ModelBenchResult

    _, rest = split_header(read_jsonl(path), "benchmark-report")
    models = []
    stats = None
    word_hist: dict[int, int] | None = None
    top_words: list[tuple[str, int]] | None = None
    for record in rest:
        kind = record.get("record")
        if kind == "benchModel":
            models.append(
                ModelBenchResult(
                    model_name=record["modelName"],
                    image_count=record["imageCount"],
                    undistorted_count=record["undistortedCount"],
                    non_distortion_rate=record["nonDistortionRate"],
                    mean_relative_area=record["meanRelativeArea"],
                    area_bin_edges=np.asarray(record["areaBinEdges"]),
                    area_bin_counts=np.asarray(record["areaBinCounts"]),
                    skipped=record.get("skipped", []),
                )
            )
        elif kind == "promptWordCounts":
            word_hist = {int(k): int(v) for k, v in record["histogram"].items()}
        elif kind == "promptTopWords":
            top_words = [(w, int(c)) for w, c in record["frequencies"]]
    if word_hist is not None:
        stats = PromptStats(word_count_histogram=word_hist, top_words=top_words or [])
    return BenchmarkReport(models=models, prompt_stats=stats)


_COMMANDS = {
    ("corpus", "gen"): _cmd_corpus_gen,
    ("corpus", "stats"): _cmd_corpus_stats,
    ("consolidate", None): _cmd_consolidate,
    ("train", None): _cmd_train,
    ("eval", None): _cmd_eval,
    ("bench", "prompts"): _cmd_bench_prompts,
    ("bench", "run"): _cmd_bench_run,
    ("report", None): _cmd_report,
}


def run_command(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage()
            return 1
        key = (args.command, getattr(args, "subcommand", None))
        handler = _COMMANDS.get(key)
        if handler is None:
            parser.print_usage()
            print(f"error: incomplete command {' '.join(k for k in key if k)!r}",
                  file=sys.stderr)
            return 1
        return handler(args)
    except _UsageError as exc:
        parser.print_usage()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, NumericError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps anything else to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
