"""File formats shared by the simulator and the pipeline commands.

Every run directory uses the same layout whether it came from the
simulator or from a real export:

    calib.txt            camera intrinsics + base->camera extrinsic
    poses.txt            one body-in-world pose per frame
    tracklets.csv        track_id,agent_class,timestamp,x,y,z
    detections.csv       track_id,agent_class,timestamp,u_min,v_min,u_max,v_max
    depth/frame_NNNNNN.png        16-bit, millimeters, 0 = invalid
    gt/frame_NNNNNN.png           8-bit class raster (simulator only)
    gt/bev_map.png + bev_map.json ground-truth BEV raster + georeference
    predictions/frame_NNNNNN_class.png + _conf.png   (or frame_NNNNNN.npy)

The fused map is a little-endian binary: magic "TMAP", version u16, then
origin_x f64, origin_y f64, resolution f64, width u32, height u32, K u8,
followed by width*height row-major cell records of K log-odds f32, a u32
count, and an elevation-sum f32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .annotate import AgentClass, AnnotationImage, DetectionBox, Tracklet
from .errors import MissingInput
from .fuse import PredictionImage, SurfaceMap
from .geometry import CameraIntrinsics, DepthImage, RigidTransform
from .mesh import SemanticMesh

TMAP_MAGIC = b"TMAP"
TMAP_VERSION = 1


def frame_name(index: int) -> str:
    return f"frame_{index:06d}"


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise MissingInput(str(path))
    return Path(path)


# ---------------------------------------------------------------- poses

def write_pose_file(path, poses) -> None:
    """poses: iterable of (timestamp, base_to_world RigidTransform)."""
    lines = []
    for t, pose in poses:
        tx, ty, tz = (float(v) for v in pose.translation)
        qw, qx, qy, qz = (float(v) for v in pose.rotation)
        lines.append(f"{float(t)!r} {tx!r} {ty!r} {tz!r} {qx!r} {qy!r} {qz!r} {qw!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_file(path):
    out = []
    for line in _require(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in line.split())
        out.append((t, RigidTransform(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))))
    return out


# ---------------------------------------------------------------- calib

def write_calib_file(path, K: CameraIntrinsics, base_to_cam: RigidTransform) -> None:
    m = base_to_cam.matrix().reshape(-1)
    lines = [
        f"fx {K.fx!r}", f"fy {K.fy!r}", f"cx {K.cx!r}", f"cy {K.cy!r}",
        f"width {K.width}", f"height {K.height}",
        "base_to_cam " + " ".join(repr(float(v)) for v in m),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_calib_file(path):
    kv = {}
    for line in _require(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        kv[key] = rest
    K = CameraIntrinsics(
        fx=float(kv["fx"]), fy=float(kv["fy"]), cx=float(kv["cx"]), cy=float(kv["cy"]),
        width=int(kv["width"]), height=int(kv["height"]),
    )
    m = np.array([float(v) for v in kv["base_to_cam"].split()]).reshape(4, 4)
    return K, RigidTransform.from_matrix(m)


# ---------------------------------------------------------------- rasters

def write_depth_png(path, depth: DepthImage) -> None:
    """16-bit single channel, value = millimeters, 0 = invalid.

    Depths beyond the representable 65.535 m become invalid rather than
    silently clamping into a false far shell.
    """
    mm = np.round(depth.values * 1000.0)
    mm[mm > 65535] = 0
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path) -> DepthImage:
    arr = np.array(Image.open(_require(path))).astype(np.float64)
    return DepthImage(arr / 1000.0)


def write_mask_png(path, ann: AnnotationImage, color_path=None) -> None:
    Image.fromarray(ann.classes, mode="L").save(path)
    if color_path is not None:
        Image.fromarray(ann.to_color(), mode="RGB").save(color_path)


def read_mask_png(path) -> AnnotationImage:
    return AnnotationImage(np.array(Image.open(_require(path)), dtype=np.uint8))


def write_prediction(dir_path, index: int, pred: PredictionImage) -> None:
    """Class raster (argmax) + 16-bit confidence raster (peak probability)."""
    dir_path = Path(dir_path)
    arg = np.argmax(pred.probs, axis=-1).astype(np.uint8) + 1
    arg[~pred.valid] = 0
    conf = np.max(pred.probs, axis=-1)
    conf_q = np.clip(np.round(conf * 65535.0), 0, 65535).astype(np.uint16)
    conf_q[~pred.valid] = 0
    Image.fromarray(arg, mode="L").save(dir_path / f"{frame_name(index)}_class.png")
    Image.fromarray(conf_q).save(dir_path / f"{frame_name(index)}_conf.png")


def read_prediction(dir_path, index: int) -> PredictionImage:
    """Read a per-frame prediction: .npy float raster if present, else the
    class + confidence PNG pair expanded to probabilities."""
    dir_path = Path(dir_path)
    npy = dir_path / f"{frame_name(index)}.npy"
    if npy.exists():
        probs = np.load(npy).astype(np.float64)
        valid = probs.sum(axis=-1) > 0.5
        safe = np.where(valid[..., None], probs, 1.0 / probs.shape[-1])
        return PredictionImage(safe, valid)
    classes = np.array(Image.open(_require(dir_path / f"{frame_name(index)}_class.png")),
                       dtype=np.uint8)
    conf = np.array(Image.open(_require(dir_path / f"{frame_name(index)}_conf.png")),
                    dtype=np.float64) / 65535.0
    return PredictionImage.from_class_confidence(classes, conf)


# ---------------------------------------------------------------- csv tables

def write_tracklets_csv(path, tracklets) -> None:
    lines = ["track_id,agent_class,timestamp,x,y,z"]
    for t in tracklets:
        for ts, p in zip(t.timestamps, t.points):
            lines.append(
                f"{t.track_id},{t.agent_class.value},{float(ts)!r},"
                f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_tracklets_csv(path, base_widths=None):
    from .annotate import AGENT_BASE_WIDTH_M

    if base_widths is None:
        base_widths = AGENT_BASE_WIDTH_M
    rows = {}
    for line in _require(path).read_text().splitlines()[1:]:
        line = line.strip()
        if not line:
            continue
        tid, cls, ts, x, y, z = line.split(",")
        rows.setdefault((int(tid), AgentClass(cls)), []).append(
            (float(ts), float(x), float(y), float(z))
        )
    tracklets = []
    for (tid, cls), samples in rows.items():
        samples.sort()
        arr = np.array(samples)
        tracklets.append(
            Tracklet(tid, cls, arr[:, 0], arr[:, 1:4], base_widths[cls])
        )
    return tracklets


def write_detections_csv(path, detections) -> None:
    lines = ["track_id,agent_class,timestamp,u_min,v_min,u_max,v_max"]
    for d in detections:
        lines.append(
            f"{d.track_id},{d.agent_class.value},{float(d.timestamp)!r},"
            f"{float(d.u_min)!r},{float(d.v_min)!r},{float(d.u_max)!r},{float(d.v_max)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_detections_csv(path):
    out = []
    for line in _require(path).read_text().splitlines()[1:]:
        line = line.strip()
        if not line:
            continue
        tid, cls, ts, u0, v0, u1, v1 = line.split(",")
        out.append(
            DetectionBox(int(tid), AgentClass(cls), float(ts),
                         float(u0), float(v0), float(u1), float(v1))
        )
    return out


# ---------------------------------------------------------------- tmap

_HEADER = struct.Struct("<4sHdddIIB")


def write_tmap(path, smap: SurfaceMap) -> None:
    cell_dtype = np.dtype(
        [("h", "<f4", (smap.num_classes,)), ("count", "<u4"), ("elev", "<f4")]
    )
    cells = np.zeros(smap.height * smap.width, dtype=cell_dtype)
    cells["h"] = smap.logodds.reshape(-1, smap.num_classes).astype(np.float32)
    cells["count"] = smap.counts.reshape(-1).astype(np.uint32)
    cells["elev"] = smap.elevation_sum.reshape(-1).astype(np.float32)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(TMAP_MAGIC, TMAP_VERSION, smap.origin_x, smap.origin_y,
                             smap.resolution, smap.width, smap.height, smap.num_classes))
        cells.tofile(f)


def read_tmap(path) -> SurfaceMap:
    raw = _require(path).read_bytes()
    magic, version, ox, oy, res, width, height, k = _HEADER.unpack_from(raw, 0)
    if magic != TMAP_MAGIC:
        raise ValueError(f"not a TMAP file: magic {magic!r}")
    if version != TMAP_VERSION:
        raise ValueError(f"unsupported TMAP version {version}")
    cell_dtype = np.dtype([("h", "<f4", (k,)), ("count", "<u4"), ("elev", "<f4")])
    cells = np.frombuffer(raw, dtype=cell_dtype, offset=_HEADER.size, count=width * height)
    return SurfaceMap(
        origin_x=ox, origin_y=oy, resolution=res, width=width, height=height,
        logodds=cells["h"].reshape(height, width, k).astype(np.float64),
        counts=cells["count"].reshape(height, width).astype(np.int64),
        elevation_sum=cells["elev"].reshape(height, width).astype(np.float64),
        num_classes=int(k),
    )


# ---------------------------------------------------------------- bev raster

def write_bev_raster(png_path, json_path, classes: np.ndarray, origin_x: float,
                     origin_y: float, resolution: float) -> None:
    Image.fromarray(np.asarray(classes, dtype=np.uint8), mode="L").save(png_path)
    meta = {
        "origin_x": origin_x, "origin_y": origin_y, "resolution": resolution,
        "width": int(classes.shape[1]), "height": int(classes.shape[0]),
    }
    Path(json_path).write_text(json.dumps(meta, indent=2) + "\n")


def read_bev_raster(png_path, json_path):
    classes = np.array(Image.open(_require(png_path)), dtype=np.uint8)
    meta = json.loads(_require(json_path).read_text())
    return classes, (meta["origin_x"], meta["origin_y"], meta["resolution"])


# ---------------------------------------------------------------- mesh

def write_mesh_file(path, mesh: SemanticMesh) -> None:
    """ASCII: header 'mesh V F', V lines 'x y z', F lines 'i j k class'."""
    lines = [f"mesh {mesh.num_vertices} {mesh.num_faces}"]
    for v in mesh.vertices:
        lines.append(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f, c in zip(mesh.faces, mesh.face_classes):
        lines.append(f"{f[0]} {f[1]} {f[2]} {int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_file(path) -> SemanticMesh:
    lines = _require(path).read_text().splitlines()
    tag, nv, nf = lines[0].split()
    if tag != "mesh":
        raise ValueError("not a mesh file")
    nv, nf = int(nv), int(nf)
    verts = np.array([[float(x) for x in lines[1 + i].split()] for i in range(nv)])
    rows = [lines[1 + nv + i].split() for i in range(nf)]
    faces = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64)
    classes = np.array([int(r[3]) for r in rows], dtype=np.uint8)
    return SemanticMesh(verts.reshape(nv, 3), faces.reshape(nf, 3), classes)
