"""Metrics: confusion matrices, IoU/precision/recall, coverage, weighted
cross-entropy, and BEV map comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import AnnotationImage, SurfaceClass
from .errors import DimensionMismatch, GridMismatch
from .fuse import BELIEF_CLASSES, PredictionImage

NUM_RASTER_CLASSES = 5  # UNKNOWN..OBSTACLE

#: per-class loss weights; UNKNOWN weighs 0 so unlabeled pixels never train
DEFAULT_LOSS_WEIGHTS = {
    SurfaceClass.UNKNOWN: 0.0,
    SurfaceClass.ROAD: 1.0,
    SurfaceClass.PEDESTRIAN: 1.0,
    SurfaceClass.CROSSING: 5.0,
    SurfaceClass.OBSTACLE: 0.2,
}


@dataclass
class ConfusionMatrix:
    """counts[gt, pred] over 5x5 classes; UNKNOWN ground truth is never counted."""

    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((NUM_RASTER_CLASSES, NUM_RASTER_CLASSES), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_RASTER_CLASSES, NUM_RASTER_CLASSES):
            raise ValueError("confusion matrix must be 5x5")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class ClassMetrics:
    """Per-class IoU / precision / recall over the four surface classes.

    A class without any ground-truth or predicted pixel is flagged
    unsupported and reports 0 for metrics with a zero denominator. The
    mean IoU runs over classes with ground-truth support.
    """

    iou: dict
    precision: dict
    recall: dict
    supported: dict
    mean_iou: float

    def as_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "per_class": {
                cls.name.lower(): {
                    "iou": self.iou[cls],
                    "precision": self.precision[cls],
                    "recall": self.recall[cls],
                    "supported": self.supported[cls],
                }
                for cls in BELIEF_CLASSES
            },
        }


def confusion(pred: AnnotationImage, gt: AnnotationImage) -> ConfusionMatrix:
    """Count (gt, pred) pairs over pixels where the ground truth is labeled."""
    if pred.classes.shape != gt.classes.shape:
        raise DimensionMismatch(
            f"prediction {pred.classes.shape} vs ground truth {gt.classes.shape}"
        )
    mask = gt.classes != SurfaceClass.UNKNOWN
    g = gt.classes[mask].astype(np.int64)
    p = pred.classes[mask].astype(np.int64)
    counts = np.bincount(
        g * NUM_RASTER_CLASSES + p, minlength=NUM_RASTER_CLASSES**2
    ).reshape(NUM_RASTER_CLASSES, NUM_RASTER_CLASSES)
    return ConfusionMatrix(counts)


def class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """IoU = TP/(TP+FP+FN), precision = TP/(TP+FP), recall = TP/(TP+FN).

    UNKNOWN predictions on labeled ground truth count as errors: they are
    false negatives of the true class and nobody's false positive.
    """
    iou, precision, recall, supported = {}, {}, {}, {}
    ious_supported = []
    for cls in BELIEF_CLASSES:
        k = int(cls)
        tp = int(cm.counts[k, k])
        fp = int(cm.counts[:, k].sum()) - tp
        fn = int(cm.counts[k, :].sum()) - tp
        iou[cls] = tp / (tp + fp + fn) if tp + fp + fn else 0.0
        precision[cls] = tp / (tp + fp) if tp + fp else 0.0
        recall[cls] = tp / (tp + fn) if tp + fn else 0.0
        supported[cls] = tp + fn > 0
        if supported[cls]:
            ious_supported.append(iou[cls])
    mean_iou = float(np.mean(ious_supported)) if ious_supported else 0.0
    return ClassMetrics(iou, precision, recall, supported, mean_iou)


def coverage_fraction(ann: AnnotationImage) -> float:
    """Fraction of pixels carrying any label."""
    return float((ann.classes != SurfaceClass.UNKNOWN).mean())


def weighted_cross_entropy(pred: PredictionImage, gt: AnnotationImage,
                           weights=None) -> float:
    """Sum over labeled pixels of -alpha_gt * log p(gt); UNKNOWN adds 0."""
    if weights is None:
        weights = DEFAULT_LOSS_WEIGHTS
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatch("prediction and ground truth sizes differ")
    total = 0.0
    p = np.clip(pred.probs, 1e-12, 1.0)
    for cls in BELIEF_CLASSES:
        alpha = weights[cls]
        if alpha == 0.0:
            continue
        mask = gt.classes == cls
        if not mask.any():
            continue
        channel = BELIEF_CLASSES.index(cls)
        total += float(-alpha * np.log(p[mask, channel]).sum())
    return total


@dataclass
class BevComparison:
    """Metrics over all labeled ground-truth cells and over only the cells
    the evaluated map actually observed (the more meaningful view for
    incomplete maps)."""

    full: ClassMetrics
    observed_only: ClassMetrics
    observed_cells: int


def _resample_nearest(raster: np.ndarray, src_geo, dst_geo) -> np.ndarray:
    """Nearest-neighbor lookup of src cells at dst cell centers.

    dst_geo is (origin_x, origin_y, resolution, height, width).
    """
    sx, sy, sres = src_geo
    dx, dy, dres, dst_h, dst_w = dst_geo
    h, w = raster.shape
    jj, ii = np.mgrid[0:dst_h, 0:dst_w]
    cx = dx + (ii + 0.5) * dres
    cy = dy + (jj + 0.5) * dres
    si = np.floor((cx - sx) / sres).astype(int)
    sj = np.floor((cy - sy) / sres).astype(int)
    out = np.zeros((dst_h, dst_w), dtype=raster.dtype)
    inb = (si >= 0) & (si < w) & (sj >= 0) & (sj < h)
    out[inb] = raster[sj[inb], si[inb]]
    return out


def compare_bev(map_classes: np.ndarray, map_geo, gt_classes: np.ndarray,
                gt_geo) -> BevComparison:
    """Compare a finalized map raster against a ground-truth BEV raster.

    geo tuples are (origin_x, origin_y, resolution). The ground truth is
    resampled onto the map grid by nearest neighbor when the grids differ.
    Raises GridMismatch when the extents are disjoint.
    """
    map_classes = np.asarray(map_classes)
    gt_classes = np.asarray(gt_classes)
    mh, mw = map_classes.shape
    gh, gw = gt_classes.shape
    mx, my, mres = map_geo
    gx, gy, gres = gt_geo

    overlap_x = min(mx + mw * mres, gx + gw * gres) - max(mx, gx)
    overlap_y = min(my + mh * mres, gy + gh * gres) - max(my, gy)
    if overlap_x <= 0 or overlap_y <= 0:
        raise GridMismatch("map extents do not overlap")

    if (mx, my, mres, mw, mh) == (gx, gy, gres, gw, gh):
        gt_on_map = gt_classes
    else:
        gt_on_map = _resample_nearest(gt_classes, (gx, gy, gres), (mx, my, mres, mh, mw))

    full = class_metrics(confusion(AnnotationImage(map_classes), AnnotationImage(gt_on_map)))
    observed = map_classes != SurfaceClass.UNKNOWN
    gt_obs = np.where(observed, gt_on_map, SurfaceClass.UNKNOWN)
    observed_only = class_metrics(
        confusion(AnnotationImage(map_classes), AnnotationImage(gt_obs))
    )
    return BevComparison(full, observed_only, int(observed.sum()))
