"""Sparse pixel annotations from trajectories (the first label dataset).

Trajectories are dilated laterally into ground ribbons, projected into the
camera, and scan-filled into per-class pixel sets. Crossings are the exact
intersection of pedestrian and vehicle evidence. Obstacles come from
points more than a height threshold above the ground plane plus detection
box interiors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, TooFewPoints
from .geometry import (
    CameraIntrinsics,
    GroundPlane,
    RigidTransform,
    backproject_pixels,
    project_points,
)

NEAR_PLANE_M = 0.1


class SurfaceClass(enum.IntEnum):
    UNKNOWN = 0
    ROAD = 1
    PEDESTRIAN = 2
    CROSSING = 3
    OBSTACLE = 4


class AgentClass(enum.Enum):
    EGO = "ego"
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"


#: lateral footprint per tracked agent type, meters
AGENT_BASE_WIDTH_M = {AgentClass.PEDESTRIAN: 0.5, AgentClass.VEHICLE: 2.0}

#: color-visualization palette (RGB)
PALETTE = {
    SurfaceClass.UNKNOWN: (0, 0, 0),
    SurfaceClass.ROAD: (0, 0, 255),
    SurfaceClass.PEDESTRIAN: (255, 255, 0),
    SurfaceClass.CROSSING: (0, 255, 0),
    SurfaceClass.OBSTACLE: (255, 0, 0),
}


@dataclass
class Tracklet:
    """Time-ordered ground-surface trajectory of one agent."""

    track_id: int
    agent_class: AgentClass
    timestamps: np.ndarray
    points: np.ndarray  # (N, 3) world meters, on the ground surface
    base_width: float

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.timestamps) != len(self.points):
            raise ValueError("timestamps and points must have equal length")
        if len(self.timestamps) >= 2 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not self.base_width > 0:
            raise ValueError("base_width must be positive")


@dataclass(frozen=True)
class DetectionBox:
    track_id: int
    agent_class: AgentClass
    timestamp: float
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError("box must have positive extent")

    @property
    def center(self):
        return (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))


@dataclass
class Ribbon:
    """Laterally dilated trajectory: one planar ground quad per segment."""

    quads: np.ndarray  # (M, 4, 3)
    source_class: SurfaceClass

    def __post_init__(self):
        self.quads = np.asarray(self.quads, dtype=np.float64).reshape(-1, 4, 3)


@dataclass
class PixelSet:
    """Set of pixel indices, stored as a boolean mask."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("pixel set mask must be 2-D")

    @classmethod
    def empty(cls, width: int, height: int) -> "PixelSet":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def _check(self, other: "PixelSet"):
        if self.mask.shape != other.mask.shape:
            raise DimensionMismatch(
                f"pixel sets of shape {self.mask.shape} vs {other.mask.shape}"
            )

    def __or__(self, other: "PixelSet") -> "PixelSet":
        self._check(other)
        return PixelSet(self.mask | other.mask)

    def __and__(self, other: "PixelSet") -> "PixelSet":
        self._check(other)
        return PixelSet(self.mask & other.mask)


@dataclass
class AnnotationImage:
    """Per-pixel surface class raster; UNKNOWN is the default filler."""

    classes: np.ndarray

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.uint8)
        if self.classes.ndim != 2:
            raise ValueError("annotation must be 2-D")

    @classmethod
    def unknown(cls, width: int, height: int) -> "AnnotationImage":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    def to_color(self) -> np.ndarray:
        rgb = np.zeros(self.classes.shape + (3,), dtype=np.uint8)
        for cls_, color in PALETTE.items():
            rgb[self.classes == cls_] = color
        return rgb


def build_ribbon(traj: Tracklet, half_width: float | None = None) -> Ribbon:
    """Dilate a trajectory laterally into ground quads, one per segment.

    half_width defaults to half the tracklet's base width. Segments with
    zero horizontal length are skipped.
    """
    if len(traj.points) < 2:
        raise TooFewPoints("a ribbon needs at least 2 trajectory points")
    if half_width is None:
        half_width = 0.5 * traj.base_width
    quads = []
    for a, b in zip(traj.points[:-1], traj.points[1:]):
        d = b[:2] - a[:2]
        norm = np.hypot(d[0], d[1])
        if norm < 1e-12:
            continue  # ZeroLengthSegment: skipped, not fatal
        perp = np.array([-d[1] / norm, d[0] / norm, 0.0]) * half_width
        quads.append([a - perp, a + perp, b + perp, b - perp])
    source = (
        SurfaceClass.ROAD if traj.agent_class is AgentClass.VEHICLE else SurfaceClass.PEDESTRIAN
    )
    return Ribbon(np.array(quads).reshape(-1, 4, 3), source)


def clip_polygon_near(pts_cam: np.ndarray, znear: float = NEAR_PLANE_M) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-frame polygon against z >= znear."""
    out = []
    n = len(pts_cam)
    for i in range(n):
        a, b = pts_cam[i], pts_cam[(i + 1) % n]
        a_in, b_in = a[2] >= znear, b[2] >= znear
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (znear - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.asarray(out, dtype=np.float64).reshape(-1, 3)


_EMPTY_FILL = (np.empty(0, int), np.empty(0, int))


def fill_convex_polygon(poly_uv: np.ndarray, width: int, height: int):
    """Pixels whose centers lie inside a convex polygon (top-left rule).

    Returns (rows, cols) index arrays. Centers exactly on a boundary count
    as inside only on top edges and left (up-screen) edges, so abutting
    polygons never claim a pixel twice.
    """
    poly = np.asarray(poly_uv, dtype=np.float64)
    n = len(poly)
    if n < 3:
        return _EMPTY_FILL
    xs = poly[:, 0].tolist()
    ys = poly[:, 1].tolist()
    area2 = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        area2 += xs[i] * ys[j] - xs[j] * ys[i]
    if area2 == 0:
        return _EMPTY_FILL
    if area2 < 0:
        xs.reverse()
        ys.reverse()

    c0 = max(0, math.ceil(min(xs) - 0.5))
    c1 = min(width - 1, math.floor(max(xs) - 0.5))
    r0 = max(0, math.ceil(min(ys) - 0.5))
    r1 = min(height - 1, math.floor(max(ys) - 0.5))
    if c1 < c0 or r1 < r0:
        return _EMPTY_FILL

    U = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] + 0.5
    V = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    inside = None
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        ax, ay, bx, by = xs[i], ys[i], xs[j], ys[j]
        e = (bx - ax) * (V - ay) - (by - ay) * (U - ax)
        inclusive = (ay == by and bx > ax) or (by < ay)
        ok = e >= 0 if inclusive else e > 0
        inside = ok if inside is None else inside & ok
    rows, cols = np.nonzero(inside)
    return rows + r0, cols + c0


def rasterize_ribbon(ribbon: Ribbon, world_to_base: RigidTransform,
                     base_to_cam: RigidTransform, K: CameraIntrinsics) -> PixelSet:
    """Project ribbon quads into the frame and scan-fill them into a pixel set.

    Quads fully behind the near plane are dropped; partially-behind quads
    are near-plane clipped in the camera frame before projection.
    """
    mask = np.zeros((K.height, K.width), dtype=bool)
    cam = base_to_cam.compose(world_to_base)
    for quad in ribbon.quads:
        pts_cam = cam.apply(quad)
        if np.all(pts_cam[:, 2] < NEAR_PLANE_M):
            continue
        clipped = clip_polygon_near(pts_cam)
        if len(clipped) < 3:
            continue
        z = clipped[:, 2]
        uv = np.stack(
            [K.fx * clipped[:, 0] / z + K.cx, K.fy * clipped[:, 1] / z + K.cy], axis=1
        )
        rows, cols = fill_convex_polygon(uv, K.width, K.height)
        mask[rows, cols] = True
    return PixelSet(mask)


def derive_crossing(s_pedestrian: PixelSet, s_vehicle: PixelSet) -> PixelSet:
    """Crossing evidence: exact intersection of the two usage sets."""
    return s_pedestrian & s_vehicle


def _fill_boxes(mask: np.ndarray, boxes) -> None:
    h, w = mask.shape
    for box in boxes:
        c0 = max(0, int(np.ceil(box.u_min - 0.5)))
        c1 = min(w - 1, int(np.floor(box.u_max - 0.5)))
        r0 = max(0, int(np.ceil(box.v_min - 0.5)))
        r1 = min(h - 1, int(np.floor(box.v_max - 0.5)))
        if c1 >= c0 and r1 >= r0:
            mask[r0 : r1 + 1, c0 : c1 + 1] = True


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def label_obstacles(points_world: np.ndarray, world_to_base: RigidTransform,
                    base_to_cam: RigidTransform, K: CameraIntrinsics, plane: GroundPlane,
                    boxes=(), height_threshold_m: float = 0.20,
                    splat_radius_px: int = 2) -> PixelSet:
    """Obstacle pixels: high points splatted as disks, plus box interiors.

    A point labels only when strictly more than height_threshold_m above
    the plane; points exactly at the threshold never label.
    """
    mask = np.zeros((K.height, K.width), dtype=bool)
    pts = np.asarray(points_world, dtype=np.float64).reshape(-1, 3)
    if len(pts):
        uv, _, _, in_frame = project_points(pts, world_to_base, base_to_cam, K)
        high = plane.height_above(pts) > height_threshold_m
        keep = in_frame & high
        if keep.any():
            cols = np.floor(uv[keep, 0]).astype(int)
            rows = np.floor(uv[keep, 1]).astype(int)
            mask[rows, cols] = True
            if splat_radius_px > 0:
                mask = ndimage.binary_dilation(mask, structure=_disk(splat_radius_px))
    _fill_boxes(mask, boxes)
    return PixelSet(mask)


def compose_annotation(s_ego: PixelSet, s_pedestrian: PixelSet, s_vehicle: PixelSet,
                       s_obstacle: PixelSet) -> AnnotationImage:
    """Assemble per-class pixel sets into one annotation raster.

    Ego evidence counts as pedestrian usage. Per-pixel precedence:
    Obstacle > Crossing > (Pedestrian | Road) > Unknown. A pixel holding
    both pedestrian and vehicle evidence is Crossing by definition, so
    Pedestrian and Road can never conflict.
    """
    ped_evidence = s_ego | s_pedestrian
    crossing = derive_crossing(ped_evidence, s_vehicle)
    ped_evidence._check(s_obstacle)

    classes = np.zeros(ped_evidence.mask.shape, dtype=np.uint8)
    classes[s_vehicle.mask] = SurfaceClass.ROAD
    classes[ped_evidence.mask] = SurfaceClass.PEDESTRIAN
    classes[crossing.mask] = SurfaceClass.CROSSING
    classes[s_obstacle.mask] = SurfaceClass.OBSTACLE
    return AnnotationImage(classes)


def tracklet_from_detections(samples, base_to_cam: RigidTransform, K: CameraIntrinsics,
                             base_widths=None) -> Tracklet:
    """Recover a ground tracklet from per-frame detection boxes.

    samples: time-ordered list of (DetectionBox, densified DepthImage,
    base_to_world pose, GroundPlane) tuples for one track. Box centers are
    backprojected at the interpolated depth and dropped vertically onto
    the frame's ground plane. Frames without valid depth at the center are
    skipped; fewer than two usable frames raise TooFewPoints.
    """
    if base_widths is None:
        base_widths = AGENT_BASE_WIDTH_M
    times, points = [], []
    agent_class = None
    track_id = None
    for box, depth, base_to_world, plane in samples:
        agent_class = agent_class or box.agent_class
        track_id = box.track_id if track_id is None else track_id
        uc, vc = box.center
        col, row = int(np.floor(uc)), int(np.floor(vc))
        if not (0 <= col < depth.width and 0 <= row < depth.height):
            continue
        d = depth.values[row, col]
        if d <= 0:
            continue  # NoValidDepth: frame skipped, not fatal
        p = backproject_pixels([[uc, vc]], [d], base_to_world, base_to_cam.invert(), K)[0]
        points.append(plane.drop_vertically(p))
        times.append(box.timestamp)
    if len(points) < 2:
        raise TooFewPoints(
            f"track {track_id}: only {len(points)} usable detection frames"
        )
    return Tracklet(
        track_id=track_id,
        agent_class=agent_class,
        timestamps=np.array(times),
        points=np.array(points),
        base_width=base_widths[agent_class],
    )
