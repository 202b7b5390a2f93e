"""Camera model, rigid transforms, projection, depth densification, plane fit.

Conventions used across the whole package:

  world frame   right-handed, z-up
  base frame    robot body, x-forward / y-left / z-up, origin on the ground
  camera frame  x-right / y-down / z-forward
  pixels        u right, v down; pixel (col, row) covers
                [col, col+1) x [row, row+1), center at (col+0.5, row+0.5)

"Depth" always means the camera-frame forward (z) coordinate of a point,
not its Euclidean range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateCloud, EmptyDepthImage, NonPositiveDepth


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal term for stability.
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        return np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(R)))
    if i == 0:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        return np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    if i == 1:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        return np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
    return np.array(
        [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    )


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform stored as a unit quaternion (w, x, y, z) + translation.

    Quaternions are normalized on construction so the unit-norm invariant
    holds for every instance. ``a.compose(b)`` (or ``a @ b``) applies ``b``
    first, then ``a``, matching 4x4 matrix products.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and nonzero")
        q = q / n
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (4, 4):
            raise ValueError("expected a 4x4 matrix")
        return cls(_matrix_to_quat(M[:3, :3]), M[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        q = _quat_multiply(self.rotation, other.rotation)
        t = self.apply(other.translation)
        return RigidTransform(q, t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def invert(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        R_inv = _quat_to_matrix(q_inv)
        return RigidTransform(q_inv, -(R_inv @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Rotate + translate points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; skew is not modeled."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass
class DepthImage:
    """Per-pixel depth in meters; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("depths must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class GroundPlane:
    """Plane normal . p = offset with a unit, +z-hemisphere normal."""

    normal: np.ndarray
    offset: float
    inlier_count: int = 0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        n = n.copy()
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)

    def height_above(self, points) -> np.ndarray:
        """Signed distance of points above the plane (along the normal)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.normal - self.offset

    def drop_vertically(self, points) -> np.ndarray:
        """Move points along -z until they lie on the plane."""
        nz = self.normal[2]
        if abs(nz) < 1e-6:
            raise DegenerateCloud("plane is vertical; cannot drop points onto it")
        p = np.atleast_2d(np.asarray(points, dtype=np.float64)).copy()
        p[:, 2] -= self.height_above(p) / nz
        return p.reshape(np.asarray(points, dtype=np.float64).shape)


def project_points(points, world_to_base: RigidTransform, base_to_cam: RigidTransform,
                   K: CameraIntrinsics):
    """Project world points into pixel coordinates (vectorized).

    Returns (uv, depth, in_front, in_frame); uv rows of behind-camera
    points are NaN. No exception is raised here -- callers clip with the
    masks. ``depth`` is the camera-frame z.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    p_cam = base_to_cam.apply(world_to_base.apply(pts))
    depth = p_cam[:, 2].copy()
    in_front = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * p_cam[:, 0] / depth + K.cx
        v = K.fy * p_cam[:, 1] / depth + K.cy
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    in_frame = in_front & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return uv, depth, in_front, in_frame


def project_world_to_pixel(p, world_to_base: RigidTransform, base_to_cam: RigidTransform,
                           K: CameraIntrinsics):
    """Single-point projection. Returns ((u, v), depth, in_frame).

    Raises BehindCamera when the point maps to depth <= 0; being outside
    the frame is reported through the flag, not an error.
    """
    uv, depth, in_front, in_frame = project_points(p, world_to_base, base_to_cam, K)
    if not in_front[0]:
        raise BehindCamera(f"point {np.asarray(p)} has camera-frame depth {depth[0]:.6g}")
    return (float(uv[0, 0]), float(uv[0, 1])), float(depth[0]), bool(in_frame[0])


def backproject_pixels(uv, depths, base_to_world: RigidTransform, cam_to_base: RigidTransform,
                       K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels with known depth to world points (vectorized inverse projection)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    rays = np.stack(
        [(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(uv))], axis=1
    )
    return base_to_world.apply(cam_to_base.apply(rays * d[:, None]))


def backproject_pixel_to_world(u: float, v: float, depth: float,
                               base_to_world: RigidTransform, cam_to_base: RigidTransform,
                               K: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be > 0, got {depth}")
    if not (np.isfinite(u) and np.isfinite(v)):
        raise ValueError("pixel coordinates must be finite")
    return backproject_pixels([[u, v]], [depth], base_to_world, cam_to_base, K)[0]


def densify_depth(sparse: DepthImage, radius_px: int = 8) -> DepthImage:
    """Fill invalid pixels with the nearest valid sample within radius_px.

    Nearest by Euclidean pixel distance; equidistant samples resolve to the
    one earliest in row-major scan order. Pixels with no sample in range
    stay invalid. Valid pixels are never modified.
    """
    if not np.any(sparse.valid):
        raise EmptyDepthImage("depth image has no valid pixels")
    h, w = sparse.values.shape
    out = sparse.values.copy()
    filled = sparse.valid.copy()

    # Offsets sorted by (distance, dy, dx): for a fixed target pixel this is
    # exactly row-major scan order of the source among equidistant samples.
    r2 = radius_px * radius_px
    offsets = [
        (dy * dy + dx * dx, dy, dx)
        for dy in range(-radius_px, radius_px + 1)
        for dx in range(-radius_px, radius_px + 1)
        if 0 < dy * dy + dx * dx <= r2
    ]
    offsets.sort()

    for _, dy, dx in offsets:
        if filled.all():
            break
        dst_r = slice(max(0, -dy), min(h, h - dy))
        dst_c = slice(max(0, -dx), min(w, w - dx))
        src_r = slice(max(0, dy), min(h, h + dy))
        src_c = slice(max(0, dx), min(w, w + dx))
        take = ~filled[dst_r, dst_c] & (sparse.values[src_r, src_c] > 0)
        region = out[dst_r, dst_c]
        region[take] = sparse.values[src_r, src_c][take]
        filled[dst_r, dst_c] |= take
    return DepthImage(out)


def fit_ground_plane(points, iterations: int = 200, inlier_threshold_m: float = 0.05,
                     seed: int = 0, max_tilt_deg: float | None = 30.0) -> GroundPlane:
    """Seeded RANSAC plane fit, refined by an SVD fit over the best inliers.

    The returned normal points into the +z hemisphere. Candidates tilted
    more than max_tilt_deg from vertical are rejected so walls in view
    cannot outvote the ground; pass None to disable the constraint.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n_pts = len(pts)
    if n_pts < 3:
        raise DegenerateCloud(f"need >= 3 points, got {n_pts}")

    min_nz = math.cos(math.radians(max_tilt_deg)) if max_tilt_deg is not None else -1.0
    rng = np.random.default_rng(seed)
    best_count = -1
    best_inliers = None
    for _ in range(iterations):
        i, j, k = rng.choice(n_pts, size=3, replace=False)
        n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        n = n / nn
        if n[2] < 0:
            n = -n
        if n[2] < min_nz:
            continue
        dist = np.abs(pts @ n - n @ pts[i])
        inliers = dist <= inlier_threshold_m
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None:
        raise DegenerateCloud("no non-degenerate plane candidate found")

    support = pts[best_inliers]
    centroid = support.mean(axis=0)
    _, _, vt = np.linalg.svd(support - centroid, full_matrices=False)
    normal = vt[2]
    if normal[2] < 0:
        normal = -normal
    norm = np.linalg.norm(normal)
    if norm < 1e-12:
        raise DegenerateCloud("degenerate inlier set")
    normal = normal / norm
    offset = float(normal @ centroid)
    final_count = int((np.abs(pts @ normal - offset) <= inlier_threshold_m).sum())
    return GroundPlane(normal, offset, final_count)
