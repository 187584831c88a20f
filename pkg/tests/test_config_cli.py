import json
from pathlib import Path

import numpy as np
import pytest

from distortlab.artifacts import read_jsonl, sha256_file
from distortlab.cli import run_command
from distortlab.config import load_config, parse_config_text
from distortlab.errors import ConfigError


class TestConfig:
    def test_defaults_without_file(self):
        config = load_config(None)
        assert config.train.batch_size == 32
        assert config.train.weight_decay == 0.01
        assert config.train.warmup_fraction == 0.1
        assert config.model.patch_size == 14
        assert config.corpus.positive_fraction == 0.72
        assert len(config.train.lr_grid) == 7

    def test_empty_file_is_all_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        assert load_config(path).digest() == load_config(None).digest()

    def test_same_file_same_digest(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("master_seed = 99\ncorpus.sample_count = 32\n")
        assert load_config(path).digest() == load_config(path).digest()

    def test_digest_changes_with_values(self, tmp_path):
        a = tmp_path / "a.cfg"
        b = tmp_path / "b.cfg"
        a.write_text("master_seed = 1\n")
        b.write_text("master_seed = 2\n")
        assert load_config(a).digest() != load_config(b).digest()

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("# comment\nmystery_knob = 3\n")
        assert err.value.key == "mystery_knob"
        assert err.value.line == 2

    def test_patch_size_pinned(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("model.patch_size = 16")
        assert err.value.key == "model.patch_size"

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("train.batch_size = many")
        assert err.value.line == 1

    def test_master_seed_fans_out(self, tmp_path):
        a = tmp_path / "a.cfg"
        a.write_text("master_seed = 5\n")
        b = tmp_path / "b.cfg"
        b.write_text("master_seed = 6\n")
        ca, cb = load_config(a), load_config(b)
        assert ca.corpus.master_seed == 5
        assert ca.model.init_seed != cb.model.init_seed
        assert ca.train.shuffle_seed != cb.train.shuffle_seed

    def test_constraint_violation_wrapped(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("model.embed_dim = 63\n")
        with pytest.raises(ConfigError):
            load_config(path)


TINY_CFG = """
master_seed = 31415
output_root = {root}
corpus.sample_count = 24
corpus.split_ratio = 4,1,1
model.embed_dim = 8
model.depth = 1
model.num_heads = 2
model.head_hidden_dim = 16
train.batch_size = 8
train.stage1_epochs = 1
train.stage2_max_epochs = 1
train.lr_grid = 5e-3
bench.generated_count = 12
"""


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "pipeline.cfg"
    config_path.write_text(TINY_CFG.format(root=root / "out"))
    assert run_command(["corpus", "gen", "--config", str(config_path)]) == 0
    return root, config_path


class TestCli:
    def test_no_command_usage(self, capsys):
        assert run_command([]) == 1

    def test_unknown_command(self, capsys):
        assert run_command(["frobnicate"]) == 1

    def test_corpus_gen_outputs(self, cli_env):
        root, _ = cli_env
        corpus_dir = root / "out" / "corpus"
        assert (corpus_dir / "manifest.jsonl").exists()
        header = read_jsonl(corpus_dir / "manifest.jsonl")[0]
        assert header["record"] == "header"
        assert header["masterSeed"] == 31415
        assert "configDigest" in header and "codeVersion" in header

    def test_write_once_without_force(self, cli_env):
        root, config_path = cli_env
        assert run_command(["corpus", "gen", "--config", str(config_path)]) == 1
        assert run_command(["corpus", "gen", "--config", str(config_path), "--force"]) == 0

    def test_prints_config_digest(self, cli_env, capsys):
        root, config_path = cli_env
        run_command(["corpus", "stats", "--config", str(config_path),
                     "--out", "stats-digest", "--force"])
        out = capsys.readouterr().out
        expected = load_config(config_path).digest()
        assert f"config digest {expected}" in out

    def test_stats_match_recomputation(self, cli_env):
        root, config_path = cli_env
        assert run_command(["corpus", "stats", "--config", str(config_path),
                            "--out", "stats", "--force"]) == 0
        records = read_jsonl(root / "out" / "stats" / "stats.jsonl")
        stats = next(r for r in records if r.get("record") == "datasetStats")

        from distortlab.corpus import corpus_stats, load_corpus_manifest

        manifest = load_corpus_manifest(root / "out" / "corpus")
        recomputed = corpus_stats(manifest)
        assert stats["positiveRate"] == pytest.approx(recomputed.positive_rate)
        assert stats["sampleCount"] == 24

    def test_train_eval_roundtrip(self, cli_env):
        root, config_path = cli_env
        assert run_command(["train", "--config", str(config_path), "--out", "train"]) == 0
        checkpoint = root / "out" / "train" / "model.vthd"
        history = root / "out" / "train" / "history.jsonl"
        assert checkpoint.exists() and history.exists()

        assert run_command(["eval", "--config", str(config_path),
                            "--checkpoint", str(checkpoint), "--out", "eval"]) == 0
        metrics = read_jsonl(root / "out" / "eval" / "metrics.jsonl")
        summary = next(r for r in metrics if r.get("record") == "metrics")
        assert 0.0 <= summary["pixelF1"] <= 1.0
        assert (root / "out" / "eval" / "metrics.csv").exists()

    def test_eval_rerun_bitwise_identical(self, cli_env):
        root, config_path = cli_env
        checkpoint = root / "out" / "train" / "model.vthd"
        assert run_command(["eval", "--config", str(config_path),
                            "--checkpoint", str(checkpoint), "--out", "eval2"]) == 0
        a = sha256_file(root / "out" / "eval" / "metrics.jsonl")
        b = sha256_file(root / "out" / "eval2" / "metrics.jsonl")
        assert a == b

    def test_train_rerun_bitwise_identical(self, cli_env):
        root, config_path = cli_env
        assert run_command(["train", "--config", str(config_path), "--out", "train2"]) == 0
        assert sha256_file(root / "out" / "train" / "model.vthd") == sha256_file(
            root / "out" / "train2" / "model.vthd"
        )
        assert sha256_file(root / "out" / "train" / "history.jsonl") == sha256_file(
            root / "out" / "train2" / "history.jsonl"
        )

    def test_eval_missing_prediction_exits_one(self, cli_env, tmp_path, capsys):
        root, config_path = cli_env
        predictions = tmp_path / "preds"
        predictions.mkdir()
        code = run_command(["eval", "--config", str(config_path),
                            "--predictions", str(predictions), "--out", "eval3"])
        assert code == 1
        err = capsys.readouterr().err
        assert "s0" in err  # names the sample

    def test_eval_requires_exactly_one_source(self, cli_env):
        root, config_path = cli_env
        assert run_command(["eval", "--config", str(config_path), "--out", "eval4"]) == 1

    def test_consolidate_matches_corpus(self, cli_env):
        root, config_path = cli_env
        corpus_dir = root / "out" / "corpus"
        assert run_command(["consolidate", "--config", str(config_path),
                            "--corpus", str(corpus_dir), "--out", "consolidated"]) == 0
        from distortlab.artifacts import read_mask_png
        from distortlab.corpus import load_corpus_manifest

        manifest = load_corpus_manifest(corpus_dir)
        for entry in manifest.entries[:4]:
            a = read_mask_png(corpus_dir / entry.consensus_mask_path)
            b = read_mask_png(root / "out" / "consolidated" / "consensus_masks" /
                              f"{entry.sample_id}.png")
            assert np.array_equal(a, b)

    def test_bench_prompts_deterministic(self, cli_env, capsys):
        root, config_path = cli_env
        assert run_command(["bench", "prompts", "--config", str(config_path),
                            "--out", "bench-a"]) == 0
        assert run_command(["bench", "prompts", "--config", str(config_path),
                            "--out", "bench-b"]) == 0
        a = sha256_file(root / "out" / "bench-a" / "prompts.jsonl")
        b = sha256_file(root / "out" / "bench-b" / "prompts.jsonl")
        assert a == b
        records = read_jsonl(root / "out" / "bench-a" / "prompts.jsonl")
        prompts = [r for r in records if r.get("record") == "prompt"]
        assert len(prompts) == 12 + 250  # generated_count + bundled real prompts

    def test_bench_run_and_report(self, cli_env):
        root, config_path = cli_env
        checkpoint = root / "out" / "train" / "model.vthd"
        images = root / "out" / "corpus" / "images"
        assert run_command([
            "bench", "run", "--config", str(config_path),
            "--checkpoint", str(checkpoint),
            "--images", f"toy={images}",
            "--prompts", str(root / "out" / "bench-a" / "prompts.jsonl"),
            "--out", "bench-run",
        ]) == 0
        records = read_jsonl(root / "out" / "bench-run" / "benchmark.jsonl")
        model_record = next(r for r in records if r.get("record") == "benchModel")
        assert model_record["imageCount"] == 24
        assert 0.0 <= model_record["nonDistortionRate"] <= 1.0

        assert run_command([
            "report", "--config", str(config_path),
            "--corpus", str(root / "out" / "corpus"),
            "--history", str(root / "out" / "train" / "history.jsonl"),
            "--metrics", str(root / "out" / "eval" / "metrics.jsonl"),
            "--bench", str(root / "out" / "bench-run" / "benchmark.jsonl"),
            "--prompts", str(root / "out" / "bench-a" / "prompts.jsonl"),
            "--out", "report",
        ]) == 0
        report_dir = root / "out" / "report"
        for name in ("positive_rate.png", "type_distribution.csv", "area_histogram.png",
                     "loss.png", "loss.csv", "per_image_metrics.csv",
                     "non_distortion_rate.png", "word_counts.png", "top_words.csv"):
            assert (report_dir / name).exists(), name

    def test_report_without_inputs_exits_one(self, cli_env):
        root, config_path = cli_env
        assert run_command(["report", "--config", str(config_path),
                            "--out", "report-empty"]) == 1

    def test_outputs_stay_under_root(self, cli_env):
        root, config_path = cli_env
        code = run_command(["corpus", "stats", "--config", str(config_path),
                            "--out", "../escape"])
        assert code == 1
