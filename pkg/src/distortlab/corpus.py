"""Deterministic synthetic corpus: procedural stick-figure scenes with injected
distortions, exact ground-truth polygons, three simulated noisy annotators,
consolidation, and on-disk manifests with hashed split assignment.

Injected regions carry a distinctive two-tone checker texture so the detection
task is learnable by construction; every sample is a pure function of
(master_seed, index).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .artifacts import (
    artifact_header,
    canonical_json,
    derive_seed,
    read_image_png,
    read_jsonl,
    read_mask_png,
    sha256_bytes,
    split_header,
    write_image_png,
    write_jsonl,
    write_mask_png,
)
from .consensus import (
    CONCRETE_TYPES,
    DistortionType,
    PolygonAnnotation,
    consolidate,
)
from .errors import ConfigError, PipelineError
from .masks import BinaryMask, Polygon, convex_hull, densify_ring, rasterize_polygon

MANIFEST_NAME = "manifest.jsonl"
_SPLITS = ("train", "val", "test")
_HULL_VERTICES = 20

# checker tones painted over injected regions, shared by both styles
_TEX_A = np.array([205.0, 72.0, 160.0])
_TEX_B = np.array([62.0, 188.0, 102.0])

_PALETTES = (
    {"bg": (168.0, 160.0, 150.0), "skin": (208.0, 178.0, 148.0), "cloth": (70.0, 88.0, 118.0)},
    {"bg": (232.0, 238.0, 248.0), "skin": (250.0, 222.0, 203.0), "cloth": (226.0, 96.0, 134.0)},
)


def _default_type_mix() -> dict[DistortionType, float]:
    return {
        DistortionType.PROLIFERATION: 0.30,
        DistortionType.ABSENCE: 0.25,
        DistortionType.DEFORMATION: 0.25,
        DistortionType.FUSION: 0.20,
    }


@dataclass(frozen=True)
class SynthConfig:
    sample_count: int = 640
    image_size: int = 112
    positive_fraction: float = 0.72
    type_mix: dict[DistortionType, float] = field(default_factory=_default_type_mix)
    vertex_jitter_std: float = 1.0
    miss_probability: float = 0.05
    master_seed: int = 12345
    split_ratio: tuple[float, float, float] = (8.0, 1.0, 1.0)

    def __post_init__(self):
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1", key="corpus.sample_count")
        if self.image_size < 28 or self.image_size % 14 != 0:
            raise ConfigError(
                f"image_size must be a multiple of 14 and >= 28, got {self.image_size}",
                key="corpus.image_size",
            )
        if not (0.0 <= self.positive_fraction <= 1.0):
            raise ConfigError("positive_fraction must be in [0, 1]", key="corpus.positive_fraction")
        if set(self.type_mix) != set(CONCRETE_TYPES):
            raise ConfigError("type_mix must cover the four concrete types", key="corpus.type_mix")
        if abs(sum(self.type_mix.values()) - 1.0) > 1e-9:
            raise ConfigError("type_mix must sum to 1", key="corpus.type_mix")
        if not (0.0 <= self.miss_probability <= 1.0):
            raise ConfigError("miss_probability must be in [0, 1]", key="corpus.miss_probability")
        if self.vertex_jitter_std < 0:
            raise ConfigError("vertex_jitter_std must be >= 0", key="corpus.vertex_jitter_std")
        if len(self.split_ratio) != 3 or any(r < 0 for r in self.split_ratio) or sum(self.split_ratio) <= 0:
            raise ConfigError("split_ratio needs three non-negative weights", key="corpus.split_ratio")

    def digest(self) -> str:
        payload = {
            "sample_count": self.sample_count,
            "image_size": self.image_size,
            "positive_fraction": self.positive_fraction,
            "type_mix": {t.value: v for t, v in sorted(self.type_mix.items(), key=lambda kv: kv[0].value)},
            "vertex_jitter_std": self.vertex_jitter_std,
            "miss_probability": self.miss_probability,
            "master_seed": self.master_seed,
            "split_ratio": list(self.split_ratio),
        }
        return sha256_bytes(canonical_json(payload).encode("utf-8"))


@dataclass(frozen=True)
class AnnotatorNoise:
    vertex_jitter_std: float
    miss_probability: float


@dataclass
class SyntheticSample:
    sample_id: str
    image: np.ndarray  # (H, W, 3) uint8
    gt_mask: BinaryMask
    records: list[tuple[DistortionType, Polygon]]
    style: int


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str
    image_path: str
    gt_mask_path: str
    consensus_mask_path: str
    annotations_path: str
    regions_path: str


@dataclass
class CorpusManifest:
    root: Path
    header: dict
    entries: list[ManifestEntry]
    split_counts: dict[str, int]

    def entries_for(self, split: str) -> list[ManifestEntry]:
        if split not in _SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]


# ---------------------------------------------------------------------------
# Scene synthesis
# ---------------------------------------------------------------------------

def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    return v / n if n > 0 else np.array([1.0, 0.0])


def _perp(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


def _stroke_corners(p0, p1, width: float, pad: float) -> np.ndarray:
    """Generous quad around a square-capped stroke."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    u = _unit(p1 - p0)
    n = _perp(u)
    hw = width / 2.0 + pad
    a, b = p0 - u * hw, p1 + u * hw
    return np.array([a + n * hw, a - n * hw, b - n * hw, b + n * hw])


def _region_polygon(points: np.ndarray, size: int) -> Polygon:
    hull = convex_hull(points)
    if len(hull) < 3:
        # degenerate hull: expand into a tiny box around the points
        cx, cy = points.mean(axis=0)
        hull = np.array([[cx - 2, cy - 2], [cx + 2, cy - 2], [cx + 2, cy + 2], [cx - 2, cy + 2]])
    ring = densify_ring(hull, _HULL_VERTICES)
    ring = np.clip(ring, 0.0, float(size))
    return Polygon(tuple((float(x), float(y)) for x, y in ring))


def _ellipse_ring(center, axis_a: float, axis_b: float, angle: float, n: int = 24) -> np.ndarray:
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ca, sa = math.cos(angle), math.sin(angle)
    xs = axis_a * np.cos(theta)
    ys = axis_b * np.sin(theta)
    ring = np.stack([center[0] + xs * ca - ys * sa, center[1] + xs * sa + ys * ca], axis=1)
    return ring


@dataclass
class _Stroke:
    p0: np.ndarray
    p1: np.ndarray
    width: float
    color: tuple[float, float, float]


@dataclass
class _Figure:
    head_center: np.ndarray
    head_radius: float
    strokes: dict[str, _Stroke]          # named limbs and torso
    digits: dict[str, list[_Stroke]]     # "hand_l"/"hand_r" -> five digit strokes
    skin: tuple[float, float, float]
    cloth: tuple[float, float, float]


def _build_figure(rng: np.random.Generator, size: int, palette: dict) -> _Figure:
    s = size / 112.0
    cx = size / 2.0 + rng.uniform(-6, 6) * s
    skin, cloth = palette["skin"], palette["cloth"]

    head_center = np.array([cx + rng.uniform(-2, 2) * s, (22 + rng.uniform(-2, 2)) * s])
    head_radius = rng.uniform(8, 10) * s
    neck = head_center + np.array([0.0, head_radius + 2 * s])
    hip = np.array([cx + rng.uniform(-2, 2) * s, 62 * s + rng.uniform(-3, 3) * s])
    shoulder = neck + np.array([0.0, 4 * s])

    strokes: dict[str, _Stroke] = {
        "torso": _Stroke(neck, hip, rng.uniform(10, 12) * s, cloth),
    }
    digits: dict[str, list[_Stroke]] = {}
    for side, sign in (("l", -1.0), ("r", 1.0)):
        elbow = shoulder + np.array(
            [sign * rng.uniform(14, 19) * s, rng.uniform(8, 14) * s]
        )
        wrist = elbow + np.array(
            [sign * rng.uniform(6, 12) * s, rng.uniform(8, 14) * s]
        )
        strokes[f"arm_{side}_upper"] = _Stroke(shoulder, elbow, rng.uniform(4, 5) * s, cloth)
        strokes[f"arm_{side}_lower"] = _Stroke(elbow, wrist, rng.uniform(4, 5) * s, skin)

        fan_base = math.atan2(wrist[1] - elbow[1], wrist[0] - elbow[0])
        hand: list[_Stroke] = []
        for d in range(5):
            angle = fan_base + math.radians(-34 + 17 * d + rng.uniform(-4, 4))
            length = rng.uniform(6.5, 9.0) * s
            tip = wrist + length * np.array([math.cos(angle), math.sin(angle)])
            hand.append(_Stroke(wrist.copy(), tip, 2.2 * s, skin))
        digits[f"hand_{side}"] = hand

        knee = hip + np.array([sign * rng.uniform(5, 9) * s, rng.uniform(15, 19) * s])
        ankle = knee + np.array([sign * rng.uniform(1, 5) * s, rng.uniform(14, 18) * s])
        strokes[f"leg_{side}_upper"] = _Stroke(hip, knee, rng.uniform(5, 6) * s, cloth)
        strokes[f"leg_{side}_lower"] = _Stroke(knee, ankle, rng.uniform(5, 6) * s, cloth)

    return _Figure(head_center, head_radius, strokes, digits, skin, cloth)


def _render_figure(draw: ImageDraw.ImageDraw, fig: _Figure, skip: set[str]) -> None:
    order = [
        "torso",
        "leg_l_upper", "leg_l_lower", "leg_r_upper", "leg_r_lower",
        "arm_l_upper", "arm_l_lower", "arm_r_upper", "arm_r_lower",
    ]
    for name in order:
        if name in skip:
            continue
        st = fig.strokes[name]
        draw.line([tuple(st.p0), tuple(st.p1)], fill=tuple(int(c) for c in st.color), width=max(1, round(st.width)))
    c, r = fig.head_center, fig.head_radius
    draw.ellipse([c[0] - r, c[1] - r, c[0] + r, c[1] + r], fill=tuple(int(v) for v in fig.skin))
    for hand, strokes in fig.digits.items():
        if hand in skip:
            continue
        for st in strokes:
            draw.line([tuple(st.p0), tuple(st.p1)], fill=tuple(int(c) for c in st.color), width=max(1, round(st.width)))


def _background(rng: np.random.Generator, size: int, palette: dict) -> np.ndarray:
    base = np.array(palette["bg"])
    rows = np.linspace(-14.0, 14.0, size)[:, None, None]
    img = np.clip(base[None, None, :] + rows + rng.normal(0.0, 5.0, size=(size, size, 3)), 0, 255)
    return img


def _bg_color_at(img: np.ndarray, point: np.ndarray) -> tuple[int, int, int]:
    y = int(np.clip(point[1], 0, img.shape[0] - 1))
    x = int(np.clip(point[0], 0, img.shape[1] - 1))
    return tuple(int(v) for v in img[y, x])


class _Injector:
    """Applies one distortion to the canvas and returns its region polygon."""

    def __init__(self, rng: np.random.Generator, fig: _Figure, size: int, bg: np.ndarray):
        self.rng = rng
        self.fig = fig
        self.size = size
        self.bg = bg

    def apply(self, dtype: DistortionType, draw: ImageDraw.ImageDraw) -> Polygon:
        if dtype is DistortionType.PROLIFERATION:
            return self._proliferation(draw)
        if dtype is DistortionType.ABSENCE:
            return self._absence(draw)
        if dtype is DistortionType.DEFORMATION:
            return self._deformation(draw)
        return self._fusion(draw)

    def _proliferation(self, draw) -> Polygon:
        host = self.rng.choice(["hand_l", "hand_r", "torso", "torso"])
        if host.startswith("hand"):
            wrist = self.fig.digits[host][0].p0
            base = self.fig.digits[host][2]
            angle = math.atan2(base.p1[1] - base.p0[1], base.p1[0] - base.p0[0])
            angle += math.radians(self.rng.uniform(40, 70)) * self.rng.choice([-1.0, 1.0])
            length = self.rng.uniform(12, 17)
            width = self.rng.uniform(4.0, 5.5)
            tip = wrist + length * np.array([math.cos(angle), math.sin(angle)])
            color = self.fig.skin
            p0 = wrist
        else:
            torso = self.fig.strokes["torso"]
            t = self.rng.uniform(0.2, 0.8)
            p0 = torso.p0 * (1 - t) + torso.p1 * t
            angle = self.rng.uniform(0, 2 * math.pi)
            length = self.rng.uniform(24, 34)
            width = self.rng.uniform(6.0, 8.0)
            tip = p0 + length * np.array([math.cos(angle), math.sin(angle)])
            color = self.fig.cloth
        draw.line([tuple(p0), tuple(tip)], fill=tuple(int(c) for c in color), width=max(1, round(width)))
        return _region_polygon(_stroke_corners(p0, tip, width, pad=3.0), self.size)

    def _absence(self, draw) -> Polygon:
        target = self.rng.choice(["hand_l", "hand_r", "arm_l_lower", "arm_r_lower"])
        corners = []
        if target.startswith("hand"):
            for st in self.fig.digits[target]:
                draw.line(
                    [tuple(st.p0), tuple(st.p1)],
                    fill=_bg_color_at(self.bg, st.p1),
                    width=max(1, round(st.width + 3)),
                )
                corners.append(_stroke_corners(st.p0, st.p1, st.width, pad=3.5))
        else:
            st = self.fig.strokes[target]
            draw.line(
                [tuple(st.p0), tuple(st.p1)],
                fill=_bg_color_at(self.bg, st.p1),
                width=max(1, round(st.width + 3)),
            )
            corners.append(_stroke_corners(st.p0, st.p1, st.width, pad=4.0))
        return _region_polygon(np.vstack(corners), self.size)

    def _deformation(self, draw) -> Polygon:
        target = self.rng.choice(
            ["arm_l_lower", "arm_r_lower", "leg_l_lower", "leg_r_lower"]
        )
        st = self.fig.strokes[target]
        vec = st.p1 - st.p0
        angle = math.atan2(vec[1], vec[0])
        angle += math.radians(self.rng.uniform(50, 90)) * self.rng.choice([-1.0, 1.0])
        length = float(np.hypot(*vec)) * self.rng.uniform(1.7, 2.2)
        width = st.width * 2.3
        tip = st.p0 + length * np.array([math.cos(angle), math.sin(angle)])
        # erase the original segment, then draw the warped replacement
        draw.line(
            [tuple(st.p0), tuple(st.p1)],
            fill=_bg_color_at(self.bg, st.p1),
            width=max(1, round(st.width + 3)),
        )
        draw.line([tuple(st.p0), tuple(tip)], fill=tuple(int(c) for c in st.color), width=max(1, round(width)))
        return _region_polygon(_stroke_corners(st.p0, tip, width, pad=2.5), self.size)

    def _fusion(self, draw) -> Polygon:
        pairs = [
            ("head", "hand_l"), ("head", "hand_r"),
            ("leg_l_lower", "leg_r_lower"),
            ("arm_l_lower", "torso"), ("arm_r_lower", "torso"),
        ]
        a, b = pairs[int(self.rng.integers(len(pairs)))]
        pa = self._anchor(a)
        pb = self._anchor(b)
        center = (pa + pb) / 2.0
        gap = float(np.hypot(*(pb - pa)))
        axis_a = gap / 2.0 + self.rng.uniform(7, 10)
        axis_b = self.rng.uniform(8, 12)
        angle = math.atan2(pb[1] - pa[1], pb[0] - pa[0])
        color_a = self.fig.skin if a in ("head", "hand_l", "hand_r") else self.fig.cloth
        color_b = self.fig.skin if b in ("head", "hand_l", "hand_r") else self.fig.cloth
        blend = tuple(int((ca + cb) / 2) for ca, cb in zip(color_a, color_b))
        ring = _ellipse_ring(center, axis_a, axis_b, angle)
        draw.polygon([tuple(p) for p in ring], fill=blend)
        return _region_polygon(ring, self.size)

    def _anchor(self, name: str) -> np.ndarray:
        if name == "head":
            return self.fig.head_center.copy()
        if name.startswith("hand"):
            return self.fig.digits[name][0].p0.copy()
        st = self.fig.strokes[name]
        return (st.p0 + st.p1) / 2.0


def _paint_texture(img: np.ndarray, bits: np.ndarray, rng: np.random.Generator) -> None:
    ys, xs = np.nonzero(bits)
    if ys.size == 0:
        return
    parity = ((xs + ys) % 2 == 0)[:, None]
    tex = np.where(parity, _TEX_A[None, :], _TEX_B[None, :])
    tex = tex + rng.normal(0.0, 5.0, size=tex.shape)
    img[ys, xs] = np.clip(0.25 * img[ys, xs] + 0.75 * tex, 0, 255)


def generate_scene(index: int, config: SynthConfig) -> SyntheticSample:
    """Render sample `index` deterministically from (master_seed, index)."""
    if not (0 <= index < config.sample_count):
        raise ValueError(f"index {index} outside [0, {config.sample_count})")
    size = config.image_size
    rng = np.random.default_rng(derive_seed(config.master_seed, "scene", index))
    style = int(rng.integers(2))
    palette = _PALETTES[style]

    img = _background(rng, size, palette)
    fig = _build_figure(rng, size, palette)

    pil = Image.fromarray(img.astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(pil)
    _render_figure(draw, fig, skip=set())

    records: list[tuple[DistortionType, Polygon]] = []
    gt_bits = np.zeros((size, size), dtype=bool)
    if rng.random() < config.positive_fraction:
        injector = _Injector(rng, fig, size, img)
        n = int(rng.integers(2, 5))
        mix_types = list(CONCRETE_TYPES)
        probs = np.array([config.type_mix[t] for t in mix_types])
        for _ in range(n):
            dtype = mix_types[int(rng.choice(len(mix_types), p=probs))]
            poly = injector.apply(dtype, draw)
            records.append((dtype, poly))

    canvas = np.asarray(pil, dtype=np.float64)
    for _, poly in records:
        bits = rasterize_polygon(poly, size, size).bits
        gt_bits |= bits
        _paint_texture(canvas, bits, rng)

    sample_id = f"s{index:05d}"
    return SyntheticSample(
        sample_id=sample_id,
        image=canvas.astype(np.uint8),
        gt_mask=BinaryMask(gt_bits),
        records=records,
        style=style,
    )


def simulate_annotator(
    sample: SyntheticSample, annotator_seed: int, noise: AnnotatorNoise
) -> list[PolygonAnnotation]:
    """One noisy annotator: per ground-truth region, maybe miss it, jitter the
    polygon vertices, and rarely mislabel the type.
    """
    rng = np.random.default_rng(annotator_seed)
    annotator_id = f"a{annotator_seed & 0xFFFF:04x}"
    size = float(sample.gt_mask.width)
    annotations: list[PolygonAnnotation] = []
    for dtype, poly in sample.records:
        if rng.random() < noise.miss_probability:
            continue
        verts = poly.as_array()
        if noise.vertex_jitter_std > 0:
            verts = verts + rng.normal(0.0, noise.vertex_jitter_std, size=verts.shape)
        verts = np.clip(verts, 0.0, size)
        label = dtype
        if rng.random() < 0.1 * noise.miss_probability:
            others = [t for t in CONCRETE_TYPES if t is not dtype]
            label = others[int(rng.integers(len(others)))]
        annotations.append(
            PolygonAnnotation(
                polygon=Polygon(tuple((float(x), float(y)) for x, y in verts)),
                type=label,
                annotator_id=annotator_id,
            )
        )
    return annotations


# ---------------------------------------------------------------------------
# Corpus assembly
# ---------------------------------------------------------------------------

def split_sizes(n: int, ratio: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of n samples across train/val/test."""
    total = float(sum(ratio))
    raw = [n * r / total for r in ratio]
    sizes = [int(math.floor(x)) for x in raw]
    leftover = n - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes[0], sizes[1], sizes[2]


def assign_splits(config: SynthConfig, sample_ids: list[str]) -> dict[str, str]:
    """Deterministic hash-ordered split assignment honoring the exact sizes."""
    n_train, n_val, n_test = split_sizes(len(sample_ids), config.split_ratio)
    ranked = sorted(
        sample_ids, key=lambda sid: (derive_seed(config.master_seed, "split", sid), sid)
    )
    assignment: dict[str, str] = {}
    for i, sid in enumerate(ranked):
        if i < n_train:
            assignment[sid] = "train"
        elif i < n_train + n_val:
            assignment[sid] = "val"
        else:
            assignment[sid] = "test"
    return assignment


def _annotation_records(sets: tuple[list[PolygonAnnotation], ...]) -> list[dict]:
    records = []
    for k, annotations in enumerate(sets):
        for ann in annotations:
            records.append({
                "record": "annotation",
                "annotator": k,
                "annotatorId": ann.annotator_id,
                "type": ann.type.value,
                "vertices": [[x, y] for x, y in ann.polygon.vertices],
            })
    return records


def read_annotation_sets(path) -> tuple[list[PolygonAnnotation], ...]:
    sets: tuple[list[PolygonAnnotation], ...] = ([], [], [])
    for record in read_jsonl(path):
        if record.get("record") != "annotation":
            continue
        k = int(record["annotator"])
        if not 0 <= k < 3:
            raise PipelineError(f"{path}: annotator index {k} out of range")
        sets[k].append(
            PolygonAnnotation(
                polygon=Polygon(tuple((float(x), float(y)) for x, y in record["vertices"])),
                type=DistortionType(record["type"]),
                annotator_id=str(record.get("annotatorId", f"a{k}")),
            )
        )
    return sets


def _build_one(index: int, config: SynthConfig, out_dir: str) -> dict:
    """Generate, annotate, consolidate, and persist one sample; returns its entry."""
    out = Path(out_dir)
    sample = generate_scene(index, config)
    noise = AnnotatorNoise(config.vertex_jitter_std, config.miss_probability)
    sets = tuple(
        simulate_annotator(
            sample, derive_seed(config.master_seed, "annotator", sample.sample_id, k), noise
        )
        for k in range(3)
    )
    size = config.image_size
    consensus, typed = consolidate(sets, size, size)

    sid = sample.sample_id
    paths = {
        "imagePath": f"images/{sid}.png",
        "gtMaskPath": f"gt_masks/{sid}.png",
        "consensusMaskPath": f"consensus_masks/{sid}.png",
        "annotationsPath": f"annotations/{sid}.jsonl",
        "regionsPath": f"regions/{sid}.jsonl",
    }
    write_image_png(out / paths["imagePath"], sample.image)
    write_mask_png(out / paths["gtMaskPath"], sample.gt_mask.bits)
    write_mask_png(out / paths["consensusMaskPath"], consensus.bits)
    write_jsonl(out / paths["annotationsPath"], _annotation_records(sets))
    write_jsonl(
        out / paths["regionsPath"],
        [
            {
                "record": "region",
                "type": dtype.value,
                "pixelCount": region.pixel_count,
                "box": [region.bounding_box.x0, region.bounding_box.y0,
                        region.bounding_box.x1, region.bounding_box.y1],
            }
            for region, dtype in typed
        ],
    )
    return {"sampleId": sid, **paths}


def _entry_key(entry: dict) -> str:
    return entry["sampleId"]


def build_corpus(
    config: SynthConfig,
    out_dir,
    config_digest: str | None = None,
    jobs: int = 1,
) -> CorpusManifest:
    """Generate the full corpus under out_dir and write its manifest.

    Sample generation is independently seeded per index, so jobs > 1 changes
    only wall time, never bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest or config.digest()

    indices = list(range(config.sample_count))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_build_one, indices, [config] * len(indices),
                                    [str(out)] * len(indices), chunksize=8))
    else:
        entries = [_build_one(i, config, str(out)) for i in indices]
    entries.sort(key=_entry_key)

    assignment = assign_splits(config, [e["sampleId"] for e in entries])
    counts = {s: 0 for s in _SPLITS}
    for entry in entries:
        entry["split"] = assignment[entry["sampleId"]]
        counts[entry["split"]] += 1

    header = artifact_header("corpus-manifest", digest, config.master_seed)
    records = [header, {"record": "splits", **counts}]
    records += [{"record": "entry", **e} for e in entries]
    write_jsonl(out / MANIFEST_NAME, records)
    return load_corpus_manifest(out)


def load_corpus_manifest(root) -> CorpusManifest:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise PipelineError(f"no {MANIFEST_NAME} under {root}")
    header, rest = split_header(read_jsonl(manifest_path), "corpus-manifest")
    entries: list[ManifestEntry] = []
    counts: dict[str, int] = {}
    for record in rest:
        kind = record.get("record")
        if kind == "splits":
            counts = {s: int(record[s]) for s in _SPLITS}
        elif kind == "entry":
            entry = ManifestEntry(
                sample_id=record["sampleId"],
                split=record["split"],
                image_path=record["imagePath"],
                gt_mask_path=record["gtMaskPath"],
                consensus_mask_path=record["consensusMaskPath"],
                annotations_path=record["annotationsPath"],
                regions_path=record["regionsPath"],
            )
            for rel in (entry.image_path, entry.gt_mask_path, entry.consensus_mask_path,
                        entry.annotations_path, entry.regions_path):
                if not (root / rel).exists():
                    raise PipelineError(f"manifest references missing file {rel}")
            entries.append(entry)
    return CorpusManifest(root=root, header=header, entries=entries, split_counts=counts)


@dataclass
class LoadedSample:
    sample_id: str
    image: np.ndarray
    consensus_mask: BinaryMask
    gt_mask: BinaryMask


def load_split_samples(manifest: CorpusManifest, split: str) -> list[LoadedSample]:
    samples = []
    for entry in manifest.entries_for(split):
        samples.append(
            LoadedSample(
                sample_id=entry.sample_id,
                image=read_image_png(manifest.root / entry.image_path),
                consensus_mask=BinaryMask(read_mask_png(manifest.root / entry.consensus_mask_path)),
                gt_mask=BinaryMask(read_mask_png(manifest.root / entry.gt_mask_path)),
            )
        )
    return samples


def corpus_stats(manifest: CorpusManifest, bin_edges: np.ndarray | None = None):
    """Recompute DatasetStats from the persisted masks and region records."""
    from .consensus import DatasetStats, default_area_bins

    edges = default_area_bins() if bin_edges is None else np.asarray(bin_edges, dtype=np.float64)
    if not manifest.entries:
        raise ValueError("corpus has no samples")
    positives = 0
    areas: list[float] = []
    type_counts = {t: 0 for t in DistortionType}
    for entry in manifest.entries:
        bits = read_mask_png(manifest.root / entry.consensus_mask_path)
        count = int(bits.sum())
        if count:
            positives += 1
            areas.append(count / bits.size)
        for record in read_jsonl(manifest.root / entry.regions_path):
            if record.get("record") == "region":
                type_counts[DistortionType(record["type"])] += 1
    total_regions = sum(type_counts.values())
    counts, _ = np.histogram(np.asarray(areas, dtype=np.float64), bins=edges)
    return DatasetStats(
        sample_count=len(manifest.entries),
        positive_count=positives,
        positive_rate=positives / len(manifest.entries),
        type_distribution={
            t: (c / total_regions if total_regions else 0.0) for t, c in type_counts.items()
        },
        type_counts=type_counts,
        area_bin_edges=edges,
        area_bin_counts=counts,
        relative_areas=areas,
    )
