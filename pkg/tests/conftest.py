"""Shared fixtures and independent oracles used by several test modules."""

import heapq
import math

import numpy as np

from groundmap.annotate import AnnotationImage, SurfaceClass
from groundmap.errors import DegenerateCloud
from groundmap.geometry import GroundPlane, RigidTransform, backproject_pixels, fit_ground_plane
from groundmap.mesh import SemanticMesh


def camera_rig(pitch_deg=25.0, height=1.6, forward=0.0):
    """base->camera transform: camera `height` above the base origin,
    `forward` along base x, pitched down by pitch_deg."""
    th = math.radians(pitch_deg)
    R = np.array(
        [
            [0.0, -1.0, 0.0],
            [-math.sin(th), 0.0, -math.cos(th)],
            [math.cos(th), 0.0, -math.sin(th)],
        ]
    )
    c = np.array([forward, 0.0, height])
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = -R @ c
    return RigidTransform.from_matrix(M)


def grid_plane_mesh(n, spacing=0.1, sigma=0.0, seed=0, cls=SurfaceClass.ROAD):
    """n x n plane mesh with uniform diagonals and optional Gaussian z-noise.

    Uniform diagonals make interior one-rings symmetric, so the umbrella
    Laplacian of the noise-free mesh vanishes away from the boundary.
    """
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
    z = rng.normal(0, sigma, (n, n)) if sigma > 0 else np.zeros((n, n))
    verts = np.c_[xs.ravel(), ys.ravel(), z.ravel()]
    faces = []
    for r in range(n - 1):
        for c in range(n - 1):
            a = r * n + c
            faces.append([a, a + 1, a + n + 1])
            faces.append([a, a + n + 1, a + n])
    return SemanticMesh(verts, np.array(faces), np.full(len(faces), int(cls), np.uint8))


def raycast_labels(mesh, world_to_base, base_to_cam, K, znear=0.1):
    """Oracle renderer: Moller-Trumbore per pixel over every face, nearest
    hit wins, ties kept by lower face index."""
    cam_to_world = base_to_cam.compose(world_to_base).invert()
    origin = cam_to_world.apply(np.zeros(3))
    R = cam_to_world.rotation_matrix()
    us, vs = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
    dirs = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)
    dirs = dirs @ R.T  # unnormalized: the ray parameter equals camera-frame z

    classes = np.zeros((K.height, K.width), dtype=np.uint8)
    depth = np.full((K.height, K.width), np.inf)
    for f_idx in range(mesh.num_faces):
        v0, v1, v2 = mesh.vertices[mesh.faces[f_idx]]
        e1, e2 = v1 - v0, v2 - v0
        h = np.cross(dirs, e2)
        a = h @ e1
        with np.errstate(divide="ignore", invalid="ignore"):
            f = 1.0 / a
            s = origin - v0
            u = f * (h @ s)
            q = np.cross(s, e1)
            v = f * np.einsum("ijk,k->ij", dirs, q)
            t = f * (q @ e2)
        hit = (
            (np.abs(a) > 1e-12)
            & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1)
            & (t >= znear) & (t < depth)
        )
        depth[hit] = t[hit]
        classes[hit] = mesh.face_classes[f_idx]
    return classes, depth


def dijkstra_cost(cm, start, goal):
    """Oracle: uniform-cost search with the same step-cost rule as astar."""
    costs = cm.costs
    dist = {tuple(start): 0.0}
    heap = [(0.0, tuple(start))]
    done = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == tuple(goal):
            return d
        ci, cj = cell
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                ni, nj = ci + di, cj + dj
                if not (0 <= ni < cm.width and 0 <= nj < cm.height):
                    continue
                if not np.isfinite(costs[nj, ni]):
                    continue
                nd = d + math.hypot(di, dj) * 0.5 * (costs[cj, ci] + costs[nj, ni])
                if nd < dist.get((ni, nj), math.inf):
                    dist[(ni, nj)] = nd
                    heapq.heappush(heap, (nd, (ni, nj)))
    return None


def oracle_argmax_mask(pred):
    """Single-frame class raster from a prediction image (UNKNOWN where invalid)."""
    cls = (np.argmax(pred.probs, axis=-1) + 1).astype(np.uint8)
    cls[~pred.valid] = 0
    return AnnotationImage(cls)


def fit_frame_plane(frame, run, seed):
    """Per-frame ground plane with the base-on-ground fallback."""
    depth = frame.depth
    rows, cols = np.nonzero(depth.valid)
    uv = np.stack([cols + 0.5, rows + 0.5], axis=1)
    cloud = backproject_pixels(uv, depth.values[rows, cols], frame.base_to_world,
                               run.base_to_cam.invert(), run.intrinsics)
    stride = max(1, len(cloud) // 4000)
    try:
        return fit_ground_plane(cloud[::stride], seed=seed)
    except DegenerateCloud:
        return GroundPlane(np.array([0.0, 0.0, 1.0]),
                           float(frame.base_to_world.translation[2]))
