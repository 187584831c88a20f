"""Pipeline configuration: a flat `section.key = value` text format with
strict key checking, defaults for every knob, and a canonical digest that is
echoed into every artifact.

All randomness flows from the single master_seed; per-module seeds are derived
from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .artifacts import derive_seed, sha256_bytes
from .consensus import DistortionType
from .corpus import SynthConfig
from .errors import ConfigError
from .model import ModelConfig, PATCH_SIZE
from .training import TrainConfig


@dataclass(frozen=True)
class BenchSettings:
    generated_count: int = 250
    real_prompts_file: str = ""  # empty -> bundled sample asset
    self_check_threshold: float = 0.8
    prediction_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.generated_count < 0:
            raise ConfigError("generated_count must be >= 0", key="bench.generated_count")
        if not (0.0 <= self.self_check_threshold <= 1.0):
            raise ConfigError(
                "self_check_threshold must be in [0, 1]", key="bench.self_check_threshold"
            )
        if not (0.0 < self.prediction_threshold < 1.0):
            raise ConfigError(
                "prediction_threshold must be in (0, 1)", key="bench.prediction_threshold"
            )


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int
    output_root: str
    corpus: SynthConfig
    model: ModelConfig
    train: TrainConfig
    bench: BenchSettings

    def canonical_lines(self) -> list[str]:
        mix = self.corpus.type_mix
        values = {
            "master_seed": self.master_seed,
            "output_root": self.output_root,
            "corpus.sample_count": self.corpus.sample_count,
            "corpus.image_size": self.corpus.image_size,
            "corpus.positive_fraction": self.corpus.positive_fraction,
            "corpus.type_mix": ",".join(
                f"{mix[t]:g}" for t in (
                    DistortionType.PROLIFERATION, DistortionType.ABSENCE,
                    DistortionType.DEFORMATION, DistortionType.FUSION,
                )
            ),
            "corpus.vertex_jitter_std": self.corpus.vertex_jitter_std,
            "corpus.miss_probability": self.corpus.miss_probability,
            "corpus.split_ratio": ",".join(f"{r:g}" for r in self.corpus.split_ratio),
            "model.patch_size": self.model.patch_size,
            "model.embed_dim": self.model.embed_dim,
            "model.depth": self.model.depth,
            "model.num_heads": self.model.num_heads,
            "model.head_hidden_dim": self.model.head_hidden_dim,
            "train.batch_size": self.train.batch_size,
            "train.stage1_epochs": self.train.stage1_epochs,
            "train.stage2_max_epochs": self.train.stage2_max_epochs,
            "train.lr_grid": ",".join(f"{lr:g}" for lr in self.train.lr_grid),
            "train.weight_decay": self.train.weight_decay,
            "train.warmup_fraction": self.train.warmup_fraction,
            "train.early_stop_patience": self.train.early_stop_patience,
            "train.positive_reweight": str(self.train.positive_reweight).lower(),
            "bench.generated_count": self.bench.generated_count,
            "bench.real_prompts_file": self.bench.real_prompts_file,
            "bench.self_check_threshold": self.bench.self_check_threshold,
            "bench.prediction_threshold": self.bench.prediction_threshold,
        }
        return [f"{key} = {values[key]}" for key in sorted(values)]

    def digest(self) -> str:
        return sha256_bytes("\n".join(self.canonical_lines()).encode("utf-8"))


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(",") if part.strip())


_KEYS: dict[str, tuple] = {
    # key -> (parser, validator description or None)
    "master_seed": (int, None),
    "output_root": (str, None),
    "corpus.sample_count": (int, None),
    "corpus.image_size": (int, None),
    "corpus.positive_fraction": (float, None),
    "corpus.type_mix": (_parse_floats, "four comma-separated fractions"),
    "corpus.vertex_jitter_std": (float, None),
    "corpus.miss_probability": (float, None),
    "corpus.split_ratio": (_parse_floats, "three comma-separated weights"),
    "model.patch_size": (int, f"fixed at {PATCH_SIZE}"),
    "model.embed_dim": (int, None),
    "model.depth": (int, None),
    "model.num_heads": (int, None),
    "model.head_hidden_dim": (int, None),
    "train.batch_size": (int, None),
    "train.stage1_epochs": (int, None),
    "train.stage2_max_epochs": (int, None),
    "train.lr_grid": (_parse_floats, "comma-separated learning rates"),
    "train.weight_decay": (float, None),
    "train.warmup_fraction": (float, None),
    "train.early_stop_patience": (int, None),
    "train.positive_reweight": (_parse_bool, None),
    "bench.generated_count": (int, None),
    "bench.real_prompts_file": (str, None),
    "bench.self_check_threshold": (float, None),
    "bench.prediction_threshold": (float, None),
}


def parse_config_text(text: str) -> dict[str, object]:
    """Parse `key = value` lines; unknown keys and bad values name key and line."""
    values: dict[str, object] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=line_no)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _KEYS:
            raise ConfigError("unknown configuration key", key=key, line=line_no)
        parser, hint = _KEYS[key]
        try:
            value = parser(raw_value)
        except ValueError as exc:
            expected = f" (expected {hint})" if hint else ""
            raise ConfigError(f"bad value {raw_value!r}{expected}", key=key, line=line_no) from exc
        if key == "model.patch_size" and value != PATCH_SIZE:
            raise ConfigError(f"patch size is fixed at {PATCH_SIZE}", key=key, line=line_no)
        if key == "corpus.type_mix" and len(value) != 4:
            raise ConfigError("type_mix needs four fractions", key=key, line=line_no)
        if key == "corpus.split_ratio" and len(value) != 3:
            raise ConfigError("split_ratio needs three weights", key=key, line=line_no)
        values[key] = value
    return values


def build_config(values: dict[str, object]) -> PipelineConfig:
    master_seed = int(values.get("master_seed", 12345))
    output_root = str(values.get("output_root", "out"))

    mix_values = values.get("corpus.type_mix")
    if mix_values is None:
        type_mix = None
    else:
        order = (DistortionType.PROLIFERATION, DistortionType.ABSENCE,
                 DistortionType.DEFORMATION, DistortionType.FUSION)
        type_mix = {t: float(v) for t, v in zip(order, mix_values)}

    try:
        corpus_kwargs = {
            "master_seed": master_seed,
        }
        for name, key in (
            ("sample_count", "corpus.sample_count"),
            ("image_size", "corpus.image_size"),
            ("positive_fraction", "corpus.positive_fraction"),
            ("vertex_jitter_std", "corpus.vertex_jitter_std"),
            ("miss_probability", "corpus.miss_probability"),
        ):
            if key in values:
                corpus_kwargs[name] = values[key]
        if type_mix is not None:
            corpus_kwargs["type_mix"] = type_mix
        if "corpus.split_ratio" in values:
            corpus_kwargs["split_ratio"] = tuple(values["corpus.split_ratio"])
        corpus = SynthConfig(**corpus_kwargs)

        model_kwargs = {"init_seed": derive_seed(master_seed, "init")}
        for name, key in (
            ("embed_dim", "model.embed_dim"),
            ("depth", "model.depth"),
            ("num_heads", "model.num_heads"),
            ("head_hidden_dim", "model.head_hidden_dim"),
        ):
            if key in values:
                model_kwargs[name] = values[key]
        model = ModelConfig(**model_kwargs)

        train_kwargs = {"shuffle_seed": derive_seed(master_seed, "shuffle")}
        for name, key in (
            ("batch_size", "train.batch_size"),
            ("stage1_epochs", "train.stage1_epochs"),
            ("stage2_max_epochs", "train.stage2_max_epochs"),
            ("weight_decay", "train.weight_decay"),
            ("warmup_fraction", "train.warmup_fraction"),
            ("early_stop_patience", "train.early_stop_patience"),
            ("positive_reweight", "train.positive_reweight"),
        ):
            if key in values:
                train_kwargs[name] = values[key]
        if "train.lr_grid" in values:
            train_kwargs["lr_grid"] = tuple(values["train.lr_grid"])
        train = TrainConfig(**train_kwargs)

        bench_kwargs = {"seed": derive_seed(master_seed, "bench")}
        for name, key in (
            ("generated_count", "bench.generated_count"),
            ("real_prompts_file", "bench.real_prompts_file"),
            ("self_check_threshold", "bench.self_check_threshold"),
            ("prediction_threshold", "bench.prediction_threshold"),
        ):
            if key in values:
                bench_kwargs[name] = values[key]
        bench = BenchSettings(**bench_kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return PipelineConfig(
        master_seed=master_seed,
        output_root=output_root,
        corpus=corpus,
        model=model,
        train=train,
        bench=bench,
    )


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load a config file (all defaults when path is None or the file is empty)."""
    if path is None:
        return build_config({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return build_config(parse_config_text(text))
