"""Semantic surface mesh: triangulation, Taubin smoothing, camera rendering.

The finalized map's observed cell centers are Delaunay-triangulated in the
ground plane and lifted to their elevations. Rendering is a deterministic
software rasterizer with a per-pixel depth buffer (flat per-face class
fill, no shading), producing the dense reprojection label images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, QhullError

from .annotate import AnnotationImage, SurfaceClass, clip_polygon_near, fill_convex_polygon
from .errors import TooFewPatches
from .geometry import CameraIntrinsics, RigidTransform

NEAR_PLANE_M = 0.1


@dataclass
class SemanticMesh:
    """Triangle mesh with one surface class per face."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) vertex indices
    face_classes: np.ndarray  # (F,) SurfaceClass values

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.face_classes = np.asarray(self.face_classes, dtype=np.uint8).reshape(-1)
        if len(self.faces) != len(self.face_classes):
            raise ValueError("one class per face required")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)


@dataclass
class RenderedLabelImage:
    """Dense class raster plus the depth of each labeled pixel."""

    annotation: AnnotationImage
    depth: np.ndarray  # (H, W); unlabeled pixels carry +inf


def _majority_class(classes_3: np.ndarray) -> int:
    vals, counts = np.unique(classes_3, return_counts=True)
    return int(vals[counts == counts.max()].min())


def triangulate_map(classes: np.ndarray, elevation: np.ndarray, origin_x: float,
                    origin_y: float, resolution: float,
                    max_edge_factor: float = 3.0) -> SemanticMesh:
    """Triangulate observed cell centers into a semantic mesh.

    Faces with any edge longer than max_edge_factor * resolution (in the
    ground plane) are dropped so unobserved gaps stay holes. A face takes
    the majority class of its vertices, ties to the lowest class index.
    """
    classes = np.asarray(classes)
    observed = classes != SurfaceClass.UNKNOWN
    rows, cols = np.nonzero(observed)
    if len(rows) < 3:
        raise TooFewPatches(f"need >= 3 observed cells, got {len(rows)}")

    xy = np.stack(
        [origin_x + (cols + 0.5) * resolution, origin_y + (rows + 0.5) * resolution], axis=1
    )
    z = np.asarray(elevation, dtype=np.float64)[rows, cols]
    z = np.where(np.isfinite(z), z, 0.0)
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise TooFewPatches(f"observed cells are degenerate: {exc}") from exc

    verts = np.c_[xy, z]
    faces = tri.simplices.astype(np.int64)

    max_edge = max_edge_factor * resolution
    a, b, c = verts[faces[:, 0], :2], verts[faces[:, 1], :2], verts[faces[:, 2], :2]
    edge_ok = (
        (np.linalg.norm(a - b, axis=1) <= max_edge)
        & (np.linalg.norm(b - c, axis=1) <= max_edge)
        & (np.linalg.norm(c - a, axis=1) <= max_edge)
    )
    area2 = np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    )
    faces = faces[edge_ok & (area2 > 1e-12)]

    vert_classes = classes[rows, cols].astype(np.uint8)
    face_classes = np.array(
        [_majority_class(vert_classes[f]) for f in faces], dtype=np.uint8
    )
    return SemanticMesh(verts, faces, face_classes)


def _vertex_adjacency(mesh: SemanticMesh) -> sparse.csr_matrix:
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    n = mesh.num_vertices
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0  # collapse duplicate entries to simple adjacency
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return adj


def umbrella_laplacian(vertices: np.ndarray, adjacency: sparse.csr_matrix) -> np.ndarray:
    """L(v) = mean(one-ring neighbors) - v; zero for isolated vertices."""
    deg = np.asarray(adjacency.sum(axis=1)).ravel()
    mean = adjacency @ vertices
    safe = np.maximum(deg, 1.0)
    L = mean / safe[:, None] - vertices
    L[deg == 0] = 0.0
    return L


def taubin_smooth(mesh: SemanticMesh, lam: float = 0.5, mu: float = -0.53,
                  iterations: int = 10) -> SemanticMesh:
    """Two-pass lambda/mu umbrella smoothing; topology and classes unchanged."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not mu < -lam:
        raise ValueError("mu must be < -lambda for shrinkage compensation")
    adj = _vertex_adjacency(mesh)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        v = v + lam * umbrella_laplacian(v, adj)
        v = v + mu * umbrella_laplacian(v, adj)
    return SemanticMesh(v, mesh.faces.copy(), mesh.face_classes.copy())


def render_mesh(mesh: SemanticMesh, world_to_base: RigidTransform,
                base_to_cam: RigidTransform, K: CameraIntrinsics) -> RenderedLabelImage:
    """Rasterize the mesh into a class image with a depth buffer.

    Perspective projection per vertex, near-plane clipping, nearest face
    wins per pixel with ties kept by the lower face index. Depth at a
    pixel is the exact intersection of the pixel-center ray with the
    face plane (1/z is affine in pixel coordinates for a planar face).
    """
    classes = np.zeros((K.height, K.width), dtype=np.uint8)
    zbuf = np.full((K.height, K.width), np.inf)

    cam = base_to_cam.compose(world_to_base)
    verts_cam = cam.apply(mesh.vertices)
    zs = verts_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u_all = K.fx * verts_cam[:, 0] / zs + K.cx
        v_all = K.fy * verts_cam[:, 1] / zs + K.cy

    # bulk cull: drop faces fully behind the near plane, and fully-in-front
    # faces whose projected bounding box covers no pixel center
    z_face = zs[mesh.faces]
    any_front = z_face.max(axis=1) >= NEAR_PLANE_M
    fully_front = z_face.min(axis=1) >= NEAR_PLANE_M
    u_face = u_all[mesh.faces]
    v_face = v_all[mesh.faces]
    with np.errstate(invalid="ignore"):
        empty_bbox = fully_front & (
            (np.floor(u_face.max(axis=1) - 0.5) < np.maximum(np.ceil(u_face.min(axis=1) - 0.5), 0))
            | (np.floor(v_face.max(axis=1) - 0.5) < np.maximum(np.ceil(v_face.min(axis=1) - 0.5), 0))
            | (u_face.min(axis=1) >= K.width) | (u_face.max(axis=1) < 0)
            | (v_face.min(axis=1) >= K.height) | (v_face.max(axis=1) < 0)
        )
    candidates = np.nonzero(any_front & ~empty_bbox)[0]

    uv_face = np.stack([u_face, v_face], axis=2)
    for idx in candidates:
        face = mesh.faces[idx]
        tri_cam = verts_cam[face]
        if fully_front[idx]:
            poly_uv = uv_face[idx]
        else:
            clipped = clip_polygon_near(tri_cam, NEAR_PLANE_M)
            if len(clipped) < 3:
                continue
            zc = clipped[:, 2]
            poly_uv = np.stack(
                [K.fx * clipped[:, 0] / zc + K.cx, K.fy * clipped[:, 1] / zc + K.cy], axis=1
            )

        rows, cols = fill_convex_polygon(poly_uv, K.width, K.height)
        if len(rows) == 0:
            continue

        # 1/z over the face plane: n . (z * ray) = n . v0
        e1 = tri_cam[1] - tri_cam[0]
        e2 = tri_cam[2] - tri_cam[0]
        n = (
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        )
        c = n[0] * tri_cam[0, 0] + n[1] * tri_cam[0, 1] + n[2] * tri_cam[0, 2]
        if abs(c) < 1e-12:
            continue  # plane passes through the camera center
        w = (
            n[0] * (cols + 0.5 - K.cx) / K.fx
            + n[1] * (rows + 0.5 - K.cy) / K.fy
            + n[2]
        ) / c
        valid = w > 0
        if not valid.any():
            continue
        depth = 1.0 / w[valid]
        rows, cols = rows[valid], cols[valid]
        closer = depth < zbuf[rows, cols]
        rows, cols, depth = rows[closer], cols[closer], depth[closer]
        zbuf[rows, cols] = depth
        classes[rows, cols] = mesh.face_classes[idx]

    return RenderedLabelImage(AnnotationImage(classes), zbuf)
