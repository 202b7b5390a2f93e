"""Log-odds fusion of per-frame class predictions into a global BEV map.

Each surface patch carries a belief vector over the four surface classes
(UNKNOWN is the absence of belief, not a channel). Beliefs start uniform
and accumulate per-observation log-odds increments, so fusion is a
commutative sum and the final class is the softmax argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import SurfaceClass
from .errors import DimensionMismatch
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    GroundPlane,
    RigidTransform,
    backproject_pixels,
)

#: belief channel order; channel k holds SurfaceClass(k + 1)
BELIEF_CLASSES = (
    SurfaceClass.ROAD,
    SurfaceClass.PEDESTRIAN,
    SurfaceClass.CROSSING,
    SurfaceClass.OBSTACLE,
)
NUM_CLASSES = len(BELIEF_CLASSES)
DEFAULT_EPS = 1e-6

#: channel index of OBSTACLE in prediction/belief vectors
OBSTACLE_CHANNEL = BELIEF_CLASSES.index(SurfaceClass.OBSTACLE)


@dataclass
class PatchBelief:
    """Belief state of one surface patch."""

    logodds: np.ndarray
    count: int = 0
    elevation_sum: float = 0.0

    def __post_init__(self):
        self.logodds = np.asarray(self.logodds, dtype=np.float64)
        if not np.all(np.isfinite(self.logodds)):
            raise ValueError("belief components must be finite")
        if self.count < 0:
            raise ValueError("observation count must be >= 0")


def uniform_belief(num_classes: int = NUM_CLASSES) -> PatchBelief:
    """Initial belief: the log odds of a uniform class distribution."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    p = 1.0 / num_classes
    return PatchBelief(np.full(num_classes, np.log(p / (1.0 - p))), count=0)


def logodds_from_probs(probs, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Componentwise log(p / (1-p)) with p clamped to [eps, 1-eps].

    Works on a single vector or any (..., K) array of probabilities.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p / (1.0 - p))


def update_belief(h: PatchBelief, l: np.ndarray, h0: PatchBelief | None = None) -> PatchBelief:
    """One fusion step: h + (l - h0), observation count incremented."""
    if h0 is None:
        h0 = uniform_belief(len(h.logodds))
    l = np.asarray(l, dtype=np.float64)
    if l.shape != h.logodds.shape or h0.logodds.shape != h.logodds.shape:
        raise DimensionMismatch(
            f"belief size {h.logodds.shape}, observation {l.shape}, prior {h0.logodds.shape}"
        )
    return PatchBelief(h.logodds + (l - h0.logodds), h.count + 1, h.elevation_sum)


def softmax(h: np.ndarray) -> np.ndarray:
    e = np.exp(h - np.max(h, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def finalize_patch(h: PatchBelief):
    """(class, probabilities) for one patch; unobserved patches are UNKNOWN.

    Ties resolve to the lowest class index.
    """
    probs = softmax(h.logodds)
    if h.count == 0:
        return SurfaceClass.UNKNOWN, probs
    return BELIEF_CLASSES[int(np.argmax(probs))], probs


@dataclass
class PredictionImage:
    """Per-pixel class probabilities; invalid pixels carry no prediction."""

    probs: np.ndarray  # (H, W, K)
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3:
            raise ValueError("prediction image must be (H, W, K)")
        if self.valid is None:
            self.valid = np.ones(self.probs.shape[:2], dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        sums = self.probs[self.valid].sum(axis=-1)
        if len(sums) and not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError("valid pixels must satisfy the simplex constraint")

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_class_confidence(cls, classes: np.ndarray, confidence: np.ndarray,
                              num_classes: int = NUM_CLASSES) -> "PredictionImage":
        """Expand a class raster + confidence raster into probabilities.

        The predicted class takes the confidence mass; the residual is
        spread uniformly over the other classes. Class 0 (UNKNOWN) marks
        pixels without a prediction.
        """
        classes = np.asarray(classes)
        conf = np.asarray(confidence, dtype=np.float64)
        if classes.shape != conf.shape:
            raise DimensionMismatch("class and confidence rasters differ in size")
        valid = classes != SurfaceClass.UNKNOWN
        h, w = classes.shape
        probs = np.full((h, w, num_classes), 1.0 / num_classes)
        residual = (1.0 - conf) / (num_classes - 1)
        probs[valid] = residual[valid, None]
        ch = np.clip(classes.astype(int) - 1, 0, num_classes - 1)
        rows, cols = np.nonzero(valid)
        probs[rows, cols, ch[rows, cols]] = conf[rows, cols]
        return cls(probs, valid)


@dataclass
class SurfaceMap:
    """Grid of surface patches in the world x/y plane.

    Cell (i, j) covers [origin_x + i*res, origin_x + (i+1)*res) in x and
    likewise in y with index j. Arrays are stored row-major as [j, i].
    """

    origin_x: float
    origin_y: float
    resolution: float
    width: int
    height: int
    logodds: np.ndarray = None
    counts: np.ndarray = None
    elevation_sum: np.ndarray = None
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        h0 = uniform_belief(self.num_classes).logodds
        if self.logodds is None:
            self.logodds = np.tile(h0, (self.height, self.width, 1))
        if self.counts is None:
            self.counts = np.zeros((self.height, self.width), dtype=np.int64)
        if self.elevation_sum is None:
            self.elevation_sum = np.zeros((self.height, self.width), dtype=np.float64)

    def world_to_cell(self, x, y):
        """(i, j) cell indices of world coordinates (vectorized)."""
        i = np.floor((np.asarray(x) - self.origin_x) / self.resolution).astype(int)
        j = np.floor((np.asarray(y) - self.origin_y) / self.resolution).astype(int)
        return i, j

    def cell_center(self, i, j):
        x = self.origin_x + (np.asarray(i) + 0.5) * self.resolution
        y = self.origin_y + (np.asarray(j) + 0.5) * self.resolution
        return x, y

    def in_bounds(self, i, j):
        return (np.asarray(i) >= 0) & (np.asarray(i) < self.width) & \
               (np.asarray(j) >= 0) & (np.asarray(j) < self.height)

    @property
    def observed(self) -> np.ndarray:
        return self.counts > 0


def accumulate_frame(smap: SurfaceMap, pred: PredictionImage, depth: DepthImage,
                     base_to_world: RigidTransform, cam_to_base: RigidTransform,
                     K: CameraIntrinsics, plane: GroundPlane,
                     ground_band_m: float = 0.20, eps: float = DEFAULT_EPS) -> dict:
    """Fuse one frame's predictions into the map (in place).

    Pixels must have valid depth and a valid prediction. A pixel
    contributes when its 3-D point lies within ground_band_m of the local
    ground plane, or when its predicted argmax is OBSTACLE (so obstacles
    standing above the band still enter the map). Points outside the map
    bounds are dropped; if every candidate pixel falls outside, the frame
    is reported as out of map.

    Returns {"updated": n, "dropped": n, "outside_map": bool}.
    """
    if (pred.height, pred.width) != (depth.height, depth.width):
        raise DimensionMismatch("prediction and depth rasters differ in size")
    if (pred.height, pred.width) != (K.height, K.width):
        raise DimensionMismatch("rasters do not match the camera size")

    use = depth.valid & pred.valid
    rows, cols = np.nonzero(use)
    if len(rows) == 0:
        return {"updated": 0, "dropped": 0, "outside_map": False}

    uv = np.stack([cols + 0.5, rows + 0.5], axis=1)
    pts = backproject_pixels(uv, depth.values[rows, cols], base_to_world, cam_to_base, K)

    probs = pred.probs[rows, cols]
    near_ground = np.abs(plane.height_above(pts)) <= ground_band_m
    is_obstacle = np.argmax(probs, axis=1) == OBSTACLE_CHANNEL
    keep = near_ground | is_obstacle
    pts, probs = pts[keep], probs[keep]
    if len(pts) == 0:
        return {"updated": 0, "dropped": int(len(rows)), "outside_map": False}

    i, j = smap.world_to_cell(pts[:, 0], pts[:, 1])
    inb = smap.in_bounds(i, j)
    if not inb.any():
        return {"updated": 0, "dropped": int(len(rows)), "outside_map": True}
    i, j, pts, probs = i[inb], j[inb], pts[inb], probs[inb]

    h0 = uniform_belief(smap.num_classes).logodds
    delta = logodds_from_probs(probs, eps) - h0
    np.add.at(smap.logodds, (j, i), delta)
    np.add.at(smap.counts, (j, i), 1)
    np.add.at(smap.elevation_sum, (j, i), pts[:, 2])
    updated = int(len(pts))
    return {"updated": updated, "dropped": int(len(rows)) - updated, "outside_map": False}


def merge_maps(target: SurfaceMap, other: SurfaceMap) -> SurfaceMap:
    """Merge per-run delta maps by componentwise addition (in place).

    Because updates are pure sums relative to the uniform prior, merging
    adds the accumulated deltas: h = h_a + (h_b - h0).
    """
    if (target.width, target.height, target.num_classes) != (
        other.width, other.height, other.num_classes
    ) or (target.origin_x, target.origin_y, target.resolution) != (
        other.origin_x, other.origin_y, other.resolution
    ):
        raise DimensionMismatch("maps must share geometry to merge")
    h0 = uniform_belief(target.num_classes).logodds
    target.logodds += other.logodds - h0
    target.counts += other.counts
    target.elevation_sum += other.elevation_sum
    return target


def finalize_map(smap: SurfaceMap):
    """(class raster, elevation raster) for the whole map.

    Unobserved cells are UNKNOWN with NaN elevation; elevation is the mean
    of the accumulated point heights.
    """
    probs = softmax(smap.logodds)
    argmax = np.argmax(probs, axis=-1)
    classes = np.zeros((smap.height, smap.width), dtype=np.uint8)
    observed = smap.observed
    class_values = np.array([int(c) for c in BELIEF_CLASSES], dtype=np.uint8)
    classes[observed] = class_values[argmax[observed]]
    with np.errstate(invalid="ignore", divide="ignore"):
        elevation = np.where(observed, smap.elevation_sum / np.maximum(smap.counts, 1), np.nan)
    return classes, elevation
