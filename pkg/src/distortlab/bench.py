"""Human-figure T2I benchmark harness: meta-attribute prompt generation with a
containment self-check and refinement loop, real-prompt ingestion, prompt
statistics, and distortion scoring of generated-image directories.
"""

from __future__ import annotations

import json
import os
import re
import string
import urllib.request
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .artifacts import derive_seed, read_image_png
from .consensus import default_area_bins
from .errors import PipelineError, PromptGenerationError
from .model import Model, predict_mask

SOURCE_GENERATED = "generated"
SOURCE_REAL = "realWorld"
_ATTRIBUTE_FIELDS = ("human_count", "age_group", "gender", "artistic_style", "activity", "setting")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class MetaAttributes:
    human_count: int
    age_group: str
    gender: str
    artistic_style: str
    activity: str
    setting: str

    def __post_init__(self):
        if self.human_count < 1:
            raise ValueError("human_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "humanCount": self.human_count,
            "ageGroup": self.age_group,
            "gender": self.gender,
            "artisticStyle": self.artistic_style,
            "activity": self.activity,
            "setting": self.setting,
        }


@dataclass(frozen=True)
class PromptRecord:
    prompt_id: str
    text: str
    source: str
    attributes: MetaAttributes | None = None
    self_check_score: float | None = None

    def to_record(self) -> dict:
        record = {
            "record": "prompt",
            "promptId": self.prompt_id,
            "text": self.text,
            "source": self.source,
        }
        if self.attributes is not None:
            record["attributes"] = self.attributes.to_dict()
        if self.self_check_score is not None:
            record["selfCheckScore"] = self.self_check_score
        return record


@dataclass(frozen=True)
class CatalogValue:
    value: str
    phrase: str
    match_terms: tuple[str, ...]
    plural: str | None = None


@dataclass(frozen=True)
class PromptCatalog:
    human_counts: tuple[CatalogValue, ...]
    age_groups: tuple[CatalogValue, ...]
    genders: tuple[CatalogValue, ...]
    styles: tuple[CatalogValue, ...]
    activities: tuple[CatalogValue, ...]
    settings: tuple[CatalogValue, ...]
    frames: tuple[str, ...]

    def field_values(self, field: str) -> tuple[CatalogValue, ...]:
        mapping = {
            "human_count": self.human_counts,
            "age_group": self.age_groups,
            "gender": self.genders,
            "artistic_style": self.styles,
            "activity": self.activities,
            "setting": self.settings,
        }
        return mapping[field]

    def lookup(self, field: str, value: str | int) -> CatalogValue:
        for entry in self.field_values(field):
            if entry.value == str(value):
                return entry
        raise KeyError(f"{value!r} not in catalog field {field}")


def _asset_path(name: str):
    return resources.files("distortlab").joinpath("assets", name)


def load_catalog(path=None) -> PromptCatalog:
    """Load the prompt catalog asset (attribute values, synonyms, frames)."""
    if path is None:
        text = _asset_path("prompt_catalog.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    buckets: dict[str, list[CatalogValue]] = {f: [] for f in _ATTRIBUTE_FIELDS}
    frames: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        kind = record.get("record")
        if kind == "frame":
            frames.append(record["text"])
        elif kind == "attribute":
            buckets[record["field"]].append(
                CatalogValue(
                    value=str(record["value"]),
                    phrase=record["phrase"],
                    match_terms=tuple(record["match"]),
                    plural=record.get("plural"),
                )
            )
        else:
            raise PipelineError(f"unknown catalog record kind {kind!r}")
    for field in _ATTRIBUTE_FIELDS:
        if not buckets[field]:
            raise PipelineError(f"catalog has no values for {field}")
    if not frames:
        raise PipelineError("catalog has no sentence frames")
    return PromptCatalog(
        human_counts=tuple(buckets["human_count"]),
        age_groups=tuple(buckets["age_group"]),
        genders=tuple(buckets["gender"]),
        styles=tuple(buckets["artistic_style"]),
        activities=tuple(buckets["activity"]),
        settings=tuple(buckets["setting"]),
        frames=tuple(frames),
    )


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = _asset_path("stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def sample_meta_attributes(seed: int, catalog: PromptCatalog) -> MetaAttributes:
    """Uniform independent draw per attribute field, seed-deterministic."""
    rng = np.random.default_rng(seed)
    picks: dict[str, CatalogValue] = {}
    for field in _ATTRIBUTE_FIELDS:
        values = catalog.field_values(field)
        if not values:
            raise PipelineError(f"empty catalog for {field}")
        picks[field] = values[int(rng.integers(len(values)))]
    return MetaAttributes(
        human_count=int(picks["human_count"].value),
        age_group=picks["age_group"].value,
        gender=picks["gender"].value,
        artistic_style=picks["artistic_style"].value,
        activity=picks["activity"].value,
        setting=picks["setting"].value,
    )


def _group_phrase(attrs: MetaAttributes, catalog: PromptCatalog) -> str:
    count = catalog.lookup("human_count", attrs.human_count)
    age = catalog.lookup("age_group", attrs.age_group)
    gender = catalog.lookup("gender", attrs.gender)
    noun = gender.phrase if attrs.human_count == 1 else (gender.plural or gender.phrase)
    return f"{count.phrase} {age.phrase} {noun}"


class TemplateGenerator:
    """Deterministic sentence-frame filler; the default generator client."""

    def __init__(self, catalog: PromptCatalog):
        self.catalog = catalog

    def generate(self, attrs: MetaAttributes, seed: int) -> str:
        rng = np.random.default_rng(seed)
        frame = self.catalog.frames[int(rng.integers(len(self.catalog.frames)))]
        group = _group_phrase(attrs, self.catalog)
        style = self.catalog.lookup("artistic_style", attrs.artistic_style).phrase
        activity = self.catalog.lookup("activity", attrs.activity).phrase
        setting = self.catalog.lookup("setting", attrs.setting).phrase
        text = frame.format(
            group=group,
            group_cap=group[0].upper() + group[1:],
            style=style,
            style_cap=style[0].upper() + style[1:],
            activity=activity,
            setting=setting,
        )
        return text


class LlmGenerator:
    """Optional external text-generation client, configured via environment.

    Reads DISTORTLAB_LLM_ENDPOINT / DISTORTLAB_LLM_API_KEY /
    DISTORTLAB_LLM_TIMEOUT; never required for the default pipeline.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 timeout: float | None = None):
        self.endpoint = endpoint or os.environ.get("DISTORTLAB_LLM_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("DISTORTLAB_LLM_API_KEY", "")
        self.timeout = timeout or float(os.environ.get("DISTORTLAB_LLM_TIMEOUT", "30"))
        if not self.endpoint:
            raise PipelineError("no LLM endpoint configured (DISTORTLAB_LLM_ENDPOINT)")

    def generate(self, attrs: MetaAttributes, seed: int) -> str:
        payload = json.dumps({"attributes": attrs.to_dict(), "seed": seed}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint,
            data=payload,
            headers={
                "Content-Type": "application/json",
                **({"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}),
            },
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                body = json.loads(response.read().decode("utf-8"))
        except Exception as exc:  # noqa: BLE001 - network failures fold into one retryable error
            raise PromptGenerationError(f"LLM client failed: {exc}") from exc
        return str(body.get("text", ""))


def render_prompt(
    attrs: MetaAttributes,
    generator,
    seed: int,
    retries: int = 3,
) -> str:
    """Produce prompt text through the pluggable generator; empty output or a
    client failure after `retries` attempts raises with the attempt count.
    """
    last_error: Exception | None = None
    for attempt in range(1, retries + 1):
        try:
            text = generator.generate(attrs, derive_seed(seed, "attempt", attempt))
        except PromptGenerationError as exc:
            last_error = exc
            continue
        if text and text.strip():
            return text.strip()
        last_error = PromptGenerationError("generator returned empty text", attempts=attempt)
    raise PromptGenerationError(
        f"prompt generation failed: {last_error}", attempts=retries
    )


def self_check(
    text: str,
    attrs: MetaAttributes,
    catalog: PromptCatalog,
    threshold: float = 0.8,
) -> tuple[bool, float]:
    """Fraction of attributes whose surface form or a listed synonym appears
    (case-insensitive, word-bounded) in the text; passes at >= threshold.
    """
    matched = 0
    values = {
        "human_count": attrs.human_count,
        "age_group": attrs.age_group,
        "gender": attrs.gender,
        "artistic_style": attrs.artistic_style,
        "activity": attrs.activity,
        "setting": attrs.setting,
    }
    for field, value in values.items():
        entry = catalog.lookup(field, value)
        terms = entry.match_terms + ((entry.plural,) if entry.plural else ())
        if any(re.search(rf"\b{re.escape(term)}\b", text, re.IGNORECASE) for term in terms):
            matched += 1
    score = matched / len(values)
    return score >= threshold, score


def generate_prompts(
    count: int,
    seed: int,
    catalog: PromptCatalog | None = None,
    generator=None,
    threshold: float = 0.8,
    max_attempts: int = 5,
) -> list[PromptRecord]:
    """Generate `count` self-checked prompts; failing texts are re-rendered
    with a fresh seed up to max_attempts, then the draw is rejected and a new
    attribute combination is sampled.
    """
    catalog = catalog or load_catalog()
    generator = generator or TemplateGenerator(catalog)
    records: list[PromptRecord] = []
    draw = 0
    while len(records) < count:
        attrs = sample_meta_attributes(derive_seed(seed, "attrs", draw), catalog)
        accepted: tuple[str, float] | None = None
        for attempt in range(max_attempts):
            text = render_prompt(attrs, generator, derive_seed(seed, "render", draw, attempt))
            passed, score = self_check(text, attrs, catalog, threshold)
            if passed:
                accepted = (text, score)
                break
        if accepted is not None:
            text, score = accepted
            records.append(
                PromptRecord(
                    prompt_id=f"gen-{len(records):04d}",
                    text=text,
                    source=SOURCE_GENERATED,
                    attributes=attrs,
                    self_check_score=score,
                )
            )
        draw += 1
        if draw > 50 * count:
            raise PipelineError("prompt generation rejected too many draws; check catalog")
    return records


def ingest_prompts(path) -> list[PromptRecord]:
    """Read real-world prompts, one per line, skipping blanks, order preserved."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise PipelineError(f"cannot read prompts file {path}: {exc}") from exc
    records = []
    for line in lines:
        text = line.strip()
        if not text:
            continue
        records.append(
            PromptRecord(
                prompt_id=f"real-{len(records):04d}",
                text=text,
                source=SOURCE_REAL,
            )
        )
    return records


@dataclass
class PromptStats:
    word_count_histogram: dict[int, int]
    top_words: list[tuple[str, int]]


def tokenize(text: str) -> list[str]:
    words = []
    for raw in text.split():
        word = raw.strip(string.punctuation).lower()
        if word:
            words.append(word)
    return words


def prompt_stats(
    prompts: list[PromptRecord],
    stopwords: frozenset[str] | None = None,
    top_k: int = 100,
) -> PromptStats:
    """Word-count histogram plus top non-stopword frequencies (ties alphabetical)."""
    if not prompts:
        raise ValueError("prompt_stats needs at least one prompt")
    stopwords = load_stopwords() if stopwords is None else stopwords
    histogram: Counter[int] = Counter()
    words: Counter[str] = Counter()
    for prompt in prompts:
        tokens = tokenize(prompt.text)
        histogram[len(tokens)] += 1
        for token in tokens:
            if token not in stopwords:
                words[token] += 1
    ranked = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return PromptStats(word_count_histogram=dict(sorted(histogram.items())), top_words=ranked)


# ---------------------------------------------------------------------------
# Scoring generated-image directories
# ---------------------------------------------------------------------------

@dataclass
class ModelBenchResult:
    model_name: str
    image_count: int
    undistorted_count: int
    non_distortion_rate: float
    mean_relative_area: float
    area_bin_edges: np.ndarray
    area_bin_counts: np.ndarray
    skipped: list[str]


@dataclass
class BenchmarkReport:
    models: list[ModelBenchResult]
    prompt_stats: PromptStats | None = None

    def to_records(self) -> list[dict]:
        records = []
        for r in self.models:
            records.append({
                "record": "benchModel",
                "modelName": r.model_name,
                "imageCount": r.image_count,
                "undistortedCount": r.undistorted_count,
                "nonDistortionRate": r.non_distortion_rate,
                "meanRelativeArea": r.mean_relative_area,
                "areaBinEdges": [float(e) for e in r.area_bin_edges],
                "areaBinCounts": [int(c) for c in r.area_bin_counts],
                "skipped": r.skipped,
            })
        if self.prompt_stats is not None:
            records.append({
                "record": "promptWordCounts",
                "histogram": {str(k): v for k, v in self.prompt_stats.word_count_histogram.items()},
            })
            records.append({
                "record": "promptTopWords",
                "frequencies": [[w, c] for w, c in self.prompt_stats.top_words],
            })
        return records


def score_image_dir(
    name: str,
    directory,
    model: Model,
    threshold: float = 0.5,
    bin_edges: np.ndarray | None = None,
) -> ModelBenchResult:
    """Predict a distortion mask per image; an image is undistorted iff its
    predicted mask is empty. Unreadable images are listed, not fatal.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise PipelineError(f"image directory {directory} does not exist")
    edges = default_area_bins() if bin_edges is None else np.asarray(bin_edges, dtype=np.float64)
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    skipped: list[str] = []
    areas: list[float] = []
    undistorted = 0
    scored = 0
    for path in paths:
        try:
            image = read_image_png(path)
        except PipelineError:
            skipped.append(path.name)
            continue
        mask = predict_mask(model, image, threshold)
        scored += 1
        if mask.empty:
            undistorted += 1
        else:
            areas.append(mask.count / (mask.width * mask.height))
    counts, _ = np.histogram(np.asarray(areas, dtype=np.float64), bins=edges)
    return ModelBenchResult(
        model_name=name,
        image_count=scored,
        undistorted_count=undistorted,
        non_distortion_rate=(undistorted / scored) if scored else 0.0,
        mean_relative_area=float(np.mean(areas)) if areas else 0.0,
        area_bin_edges=edges,
        area_bin_counts=counts,
        skipped=skipped,
    )


def benchmark_models(
    model_image_dirs: dict[str, str],
    model: Model,
    threshold: float = 0.5,
    bin_edges: np.ndarray | None = None,
    prompts: list[PromptRecord] | None = None,
) -> BenchmarkReport:
    results = [
        score_image_dir(name, directory, model, threshold, bin_edges)
        for name, directory in sorted(model_image_dirs.items())
    ]
    stats = prompt_stats(prompts) if prompts else None
    return BenchmarkReport(models=results, prompt_stats=stats)
