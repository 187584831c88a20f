"""Three-annotator consolidation: consensus masks, region typing, dataset stats."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionMismatchError
from .masks import BinaryMask, ComponentRegion, Polygon, connected_components, rasterize_polygon

ANNOTATORS_PER_SAMPLE = 3


class DistortionType(Enum):
    PROLIFERATION = "proliferation"
    ABSENCE = "absence"
    DEFORMATION = "deformation"
    FUSION = "fusion"
    UNCERTAIN = "uncertain"


CONCRETE_TYPES = (
    DistortionType.PROLIFERATION,
    DistortionType.ABSENCE,
    DistortionType.DEFORMATION,
    DistortionType.FUSION,
)


@dataclass(frozen=True)
class PolygonAnnotation:
    """One annotator's outlined region plus its distortion-type tag."""

    polygon: Polygon
    type: DistortionType
    annotator_id: str

    def __post_init__(self):
        if self.type not in CONCRETE_TYPES:
            raise ValueError(f"annotations carry a concrete type, got {self.type}")


@dataclass
class AnnotatedSample:
    sample_id: str
    image_ref: str
    annotation_sets: tuple[list[PolygonAnnotation], ...]
    consensus_mask: BinaryMask
    typed_regions: list[tuple[ComponentRegion, DistortionType]]
    split: str

    def __post_init__(self):
        if len(self.annotation_sets) != ANNOTATORS_PER_SAMPLE:
            raise ValueError(
                f"expected {ANNOTATORS_PER_SAMPLE} annotation sets, got {len(self.annotation_sets)}"
            )


@dataclass
class DatasetStats:
    sample_count: int
    positive_count: int
    positive_rate: float
    type_distribution: dict[DistortionType, float]
    type_counts: dict[DistortionType, int]
    area_bin_edges: np.ndarray
    area_bin_counts: np.ndarray
    relative_areas: list[float] = field(default_factory=list)


def consensus_mask(masks: tuple[BinaryMask, BinaryMask, BinaryMask]) -> BinaryMask:
    """Pixels marked distorted by at least two of the three annotators."""
    if len(masks) != ANNOTATORS_PER_SAMPLE:
        raise ValueError(f"consensus needs exactly {ANNOTATORS_PER_SAMPLE} masks")
    shape = masks[0].bits.shape
    for m in masks[1:]:
        if m.bits.shape != shape:
            raise DimensionMismatchError(
                f"annotator mask dimensions differ: {shape} vs {m.bits.shape}"
            )
    votes = sum(m.bits.astype(np.uint8) for m in masks)
    return BinaryMask(votes >= 2)


def annotator_mask(
    annotations: list[PolygonAnnotation], width: int, height: int
) -> BinaryMask:
    """Union of one annotator's rasterized polygons."""
    bits = np.zeros((height, width), dtype=bool)
    for ann in annotations:
        bits |= rasterize_polygon(ann.polygon, width, height).bits
    return BinaryMask(bits)


def consensus_types(
    annotation_sets: tuple[list[PolygonAnnotation], ...],
    consensus: BinaryMask,
) -> list[tuple[ComponentRegion, DistortionType]]:
    """Assign each consensus component a type, or Uncertain on any disagreement.

    A component gets a concrete type only when every annotator has at least
    one polygon overlapping it (>= 1 shared pixel) and all overlapping
    polygons, across all annotators, carry the same type. A silent annotator
    counts as a missing voice and yields Uncertain.
    """
    if len(annotation_sets) != ANNOTATORS_PER_SAMPLE:
        raise ValueError(f"expected {ANNOTATORS_PER_SAMPLE} annotation sets")
    width, height = consensus.width, consensus.height
    rasterized = [
        [(rasterize_polygon(a.polygon, width, height).bits, a.type) for a in annotations]
        for annotations in annotation_sets
    ]
    typed: list[tuple[ComponentRegion, DistortionType]] = []
    for region in connected_components(consensus, connectivity=8):
        region_bits = region.to_mask(width, height).bits
        collected: list[DistortionType] = []
        voices = 0
        for annotator in rasterized:
            overlapping = [t for bits, t in annotator if np.any(bits & region_bits)]
            if overlapping:
                voices += 1
            collected.extend(overlapping)
        if voices == ANNOTATORS_PER_SAMPLE and len(set(collected)) == 1:
            typed.append((region, collected[0]))
        else:
            typed.append((region, DistortionType.UNCERTAIN))
    return typed


def consolidate(
    annotation_sets: tuple[list[PolygonAnnotation], ...], width: int, height: int
) -> tuple[BinaryMask, list[tuple[ComponentRegion, DistortionType]]]:
    """Full per-sample consolidation: consensus mask plus typed regions."""
    masks = tuple(annotator_mask(anns, width, height) for anns in annotation_sets)
    consensus = consensus_mask(masks)
    return consensus, consensus_types(annotation_sets, consensus)


def default_area_bins() -> np.ndarray:
    """20 equal-width bins over (0, 1]."""
    return np.linspace(0.0, 1.0, 21)


def dataset_stats(
    samples: list[AnnotatedSample], bin_edges: np.ndarray | None = None
) -> DatasetStats:
    """Corpus-level statistics: positive rate, type shares, relative-area histogram.

    The histogram covers positive samples only; the type distribution weights
    every typed region equally.
    """
    if not samples:
        raise ValueError("dataset_stats needs at least one sample")
    edges = default_area_bins() if bin_edges is None else np.asarray(bin_edges, dtype=np.float64)

    positives = 0
    areas: list[float] = []
    type_counts = {t: 0 for t in DistortionType}
    for sample in samples:
        mask = sample.consensus_mask
        if not mask.empty:
            positives += 1
            areas.append(mask.count / (mask.width * mask.height))
        for _, dtype in sample.typed_regions:
            type_counts[dtype] += 1

    total_regions = sum(type_counts.values())
    distribution = {
        t: (c / total_regions if total_regions else 0.0) for t, c in type_counts.items()
    }
    counts, _ = np.histogram(np.asarray(areas, dtype=np.float64), bins=edges)
    return DatasetStats(
        sample_count=len(samples),
        positive_count=positives,
        positive_rate=positives / len(samples),
        type_distribution=distribution,
        type_counts=type_counts,
        area_bin_edges=edges,
        area_bin_counts=counts,
        relative_areas=areas,
    )
