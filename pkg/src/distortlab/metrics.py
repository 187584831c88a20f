"""Pixel-, area-, and image-level evaluation of mask predictors.

All dataset-level scores use micro (global-count) aggregation, under which
pixel F1 equals Dice exactly. Degenerate conventions: precision is 1 when
nothing was predicted, recall is 1 when nothing was there to find, F1 is 0
when precision + recall is 0, and IoU/Dice are 1 when both sides are empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import read_jsonl, read_mask_png
from .errors import DimensionMismatchError, MissingPredictionError, PipelineError
from .masks import BinaryMask, Box, boxes_to_mask
from .model import Model, predict_mask


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


def mask_confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    if pred.bits.shape != gt.bits.shape:
        raise DimensionMismatchError(
            f"prediction {pred.width}x{pred.height} vs ground truth {gt.width}x{gt.height}"
        )
    p, g = pred.bits, gt.bits
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    # count form of the harmonic mean: identical to 2PR/(P+R) under the
    # degenerate conventions, and bitwise-equal to Dice on the same counts
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else (1.0 if precision + recall == 2.0 else 0.0)
    return precision, recall, f1


def overlap_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float]:
    union = tp + fp + fn
    iou = tp / union if union else 1.0
    denom = 2 * tp + fp + fn
    dice = 2 * tp / denom if denom else 1.0
    return iou, dice


def _pool(predictions: list[BinaryMask], ground_truths: list[BinaryMask]) -> ConfusionCounts:
    if not predictions or len(predictions) != len(ground_truths):
        raise ValueError("need matching non-empty prediction/ground-truth lists")
    counts = ConfusionCounts(0, 0, 0, 0)
    for pred, gt in zip(predictions, ground_truths):
        counts = counts + mask_confusion(pred, gt)
    return counts


def pixel_prf(
    predictions: list[BinaryMask], ground_truths: list[BinaryMask]
) -> tuple[float, float, float]:
    """Micro-aggregated pixel precision/recall/F1 over all images."""
    c = _pool(predictions, ground_truths)
    return prf_from_counts(c.tp, c.fp, c.fn)


def overlap_metrics(
    predictions: list[BinaryMask], ground_truths: list[BinaryMask]
) -> tuple[float, float]:
    """Global IoU and Dice from pooled pixel counts."""
    c = _pool(predictions, ground_truths)
    return overlap_from_counts(c.tp, c.fp, c.fn)


def image_level_prf(
    predictions: list[BinaryMask], ground_truths: list[BinaryMask]
) -> tuple[float, float, float]:
    """An image counts as predicted/actual positive iff its mask is non-empty."""
    if not predictions or len(predictions) != len(ground_truths):
        raise ValueError("need matching non-empty prediction/ground-truth lists")
    tp = fp = fn = 0
    for pred, gt in zip(predictions, ground_truths):
        p, g = not pred.empty, not gt.empty
        tp += p and g
        fp += p and not g
        fn += g and not p
    return prf_from_counts(tp, fp, fn)


@dataclass
class PerImageMetrics:
    sample_id: str
    iou: float
    dice: float
    predicted_positive: bool
    gt_positive: bool
    predicted_relative_area: float


@dataclass
class MetricsReport:
    pixel_precision: float
    pixel_recall: float
    pixel_f1: float
    area_iou: float
    area_dice: float
    image_precision: float
    image_recall: float
    image_f1: float
    per_image: list[PerImageMetrics]

    def to_records(self) -> list[dict]:
        summary = {
            "record": "metrics",
            "pixelPrecision": self.pixel_precision,
            "pixelRecall": self.pixel_recall,
            "pixelF1": self.pixel_f1,
            "areaIoU": self.area_iou,
            "areaDice": self.area_dice,
            "imagePrecision": self.image_precision,
            "imageRecall": self.image_recall,
            "imageF1": self.image_f1,
            "imageCount": len(self.per_image),
        }
        rows = [
            {
                "record": "image",
                "sampleId": m.sample_id,
                "iou": m.iou,
                "dice": m.dice,
                "predictedPositive": m.predicted_positive,
                "gtPositive": m.gt_positive,
                "predictedRelativeArea": m.predicted_relative_area,
            }
            for m in self.per_image
        ]
        return [summary] + rows

    def csv_rows(self) -> tuple[list[str], list[dict]]:
        fields = ["sampleId", "iou", "dice", "predictedPositive", "gtPositive",
                  "predictedRelativeArea"]
        rows = [
            {
                "sampleId": m.sample_id,
                "iou": f"{m.iou:.6f}",
                "dice": f"{m.dice:.6f}",
                "predictedPositive": int(m.predicted_positive),
                "gtPositive": int(m.gt_positive),
                "predictedRelativeArea": f"{m.predicted_relative_area:.6f}",
            }
            for m in self.per_image
        ]
        return fields, rows


class PredictionDirectory:
    """External predictions: per-sample mask PNGs or box-list JSONL files.

    A sample's prediction is `<sampleId>.png` (single-channel mask) or
    `<sampleId>.boxes.jsonl` (one {"box": [x0, y0, x1, y1]} record per line,
    rasterized through boxes_to_mask).
    """

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_dir():
            raise PipelineError(f"prediction directory {self.path} does not exist")

    def mask_for(self, sample_id: str, width: int, height: int) -> BinaryMask:
        png = self.path / f"{sample_id}.png"
        if png.exists():
            bits = read_mask_png(png)
            mask = BinaryMask(bits)
            if (mask.width, mask.height) != (width, height):
                raise DimensionMismatchError(
                    f"prediction for {sample_id} is {mask.width}x{mask.height}, "
                    f"expected {width}x{height}"
                )
            return mask
        boxes_path = self.path / f"{sample_id}.boxes.jsonl"
        if boxes_path.exists():
            boxes = [
                Box(*record["box"])
                for record in read_jsonl(boxes_path)
                if "box" in record
            ]
            return boxes_to_mask(boxes, width, height)
        raise MissingPredictionError(f"no prediction for sample {sample_id!r} in {self.path}")


def evaluate(
    prediction_source,
    samples,
    threshold: float = 0.5,
) -> MetricsReport:
    """Score a predictor on (sample_id, image, ground-truth mask) samples.

    prediction_source is a trained Model (scored through predict_mask) or a
    PredictionDirectory of external mask/box files. Results are ordered by
    sample id; a missing external prediction is an error naming the sample.
    """
    ordered = sorted(samples, key=lambda s: s.sample_id)
    if not ordered:
        raise ValueError("nothing to evaluate")
    predictions: list[BinaryMask] = []
    ground_truths: list[BinaryMask] = []
    per_image: list[PerImageMetrics] = []
    for sample in ordered:
        gt = sample.consensus_mask
        if isinstance(prediction_source, Model):
            pred = predict_mask(prediction_source, sample.image, threshold)
        elif isinstance(prediction_source, PredictionDirectory):
            pred = prediction_source.mask_for(sample.sample_id, gt.width, gt.height)
        else:
            raise TypeError(
                f"prediction source must be a Model or PredictionDirectory, got "
                f"{type(prediction_source).__name__}"
            )
        c = mask_confusion(pred, gt)
        iou, dice = overlap_from_counts(c.tp, c.fp, c.fn)
        per_image.append(
            PerImageMetrics(
                sample_id=sample.sample_id,
                iou=iou,
                dice=dice,
                predicted_positive=not pred.empty,
                gt_positive=not gt.empty,
                predicted_relative_area=pred.count / (pred.width * pred.height),
            )
        )
        predictions.append(pred)
        ground_truths.append(gt)

    pp, pr, pf = pixel_prf(predictions, ground_truths)
    iou, dice = overlap_metrics(predictions, ground_truths)
    ip, ir, if1 = image_level_prf(predictions, ground_truths)
    return MetricsReport(
        pixel_precision=pp, pixel_recall=pr, pixel_f1=pf,
        area_iou=iou, area_dice=dice,
        image_precision=ip, image_recall=ir, image_f1=if1,
        per_image=per_image,
    )
