"""Synthetic street worlds and an exact sensor oracle.

Generates a straight street with sidewalks, zebra-style crossings, walls,
and scattered obstacles, then simulates an ego walk with pedestrian and
vehicle agents. Depth images are exact ray casts against the world
geometry (ground plus axis-aligned boxes), detection boxes are exact
projections of agent bounding volumes, and the prediction oracle emits
seeded noisy class probabilities at a chosen accuracy. Everything is a
pure function of (spec, seed), so downstream claims can be verified
against known ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .annotate import AgentClass, AnnotationImage, DetectionBox, SurfaceClass, Tracklet
from .errors import InfeasibleLayout, RouteOffSurface
from .fuse import NUM_CLASSES, PredictionImage
from .geometry import CameraIntrinsics, DepthImage, RigidTransform

MAX_RANGE_M = 60.0  # inside the 65.535 m ceiling of the 16-bit depth raster
NEAR_M = 0.1

PED_HALF_XY = 0.25
PED_HEIGHT = 1.8
VEH_HALF_X = 2.0
VEH_HALF_Y = 1.0
VEH_HEIGHT = 1.6

LEGAL_SURFACES = {
    AgentClass.EGO: {SurfaceClass.PEDESTRIAN, SurfaceClass.CROSSING},
    AgentClass.PEDESTRIAN: {SurfaceClass.PEDESTRIAN, SurfaceClass.CROSSING},
    AgentClass.VEHICLE: {SurfaceClass.ROAD, SurfaceClass.CROSSING},
}


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    length_m: float = 60.0
    width_m: float = 24.0
    road_width_m: float = 7.0
    sidewalk_width_m: float = 3.0
    num_crossings: int = 2
    crossing_width_m: float = 3.0
    obstacle_count: int = 6
    terrain_amplitude_m: float = 0.0
    resolution_m: float = 0.25
    wall_height_m: float = 2.5
    wall_thickness_m: float = 0.5

    def __post_init__(self):
        if min(self.length_m, self.width_m, self.road_width_m,
               self.sidewalk_width_m, self.resolution_m) <= 0:
            raise ValueError("all widths must be positive")
        needed = self.road_width_m + 2 * self.sidewalk_width_m + 2 * self.wall_thickness_m
        if needed > self.width_m:
            raise InfeasibleLayout(
                f"layout needs {needed:.2f} m across, extent is {self.width_m:.2f} m"
            )


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid used for walls, obstacles, and agent bodies."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float


@dataclass
class GroundTruthWorld:
    spec: WorldSpec
    classes: np.ndarray  # (H, W) BEV class raster
    obstacles: list  # static Boxes (walls + scattered)
    road_band: tuple  # (y0, y1)
    sidewalk_lower: tuple
    sidewalk_upper: tuple
    crossings: list  # [(x0, x1)]
    _phase: tuple = (0.0, 0.0)

    @property
    def origin(self):
        return (0.0, 0.0)

    @property
    def resolution(self) -> float:
        return self.spec.resolution_m

    def height_at(self, x, y):
        """Terrain height; identically zero for flat worlds."""
        a = self.spec.terrain_amplitude_m
        if a == 0.0:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        px, py = self._phase
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return a * np.sin(2 * np.pi * x / 18.0 + px) * np.sin(2 * np.pi * y / 10.0 + py)

    def class_at(self, x, y):
        """BEV class at world coordinates; UNKNOWN outside the raster."""
        i = np.floor(np.asarray(x) / self.resolution).astype(int)
        j = np.floor(np.asarray(y) / self.resolution).astype(int)
        h, w = self.classes.shape
        inb = (i >= 0) & (i < w) & (j >= 0) & (j < h)
        out = np.zeros(np.broadcast(i, j).shape, dtype=np.uint8)
        out[inb] = self.classes[j[inb], i[inb]]
        return out


def generate_world(spec: WorldSpec) -> GroundTruthWorld:
    """Deterministic street world from a seeded spec."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    res = spec.resolution_m
    w_cells = int(round(spec.length_m / res))
    h_cells = int(round(spec.width_m / res))

    yc = spec.width_m / 2
    road = (yc - spec.road_width_m / 2, yc + spec.road_width_m / 2)
    sw_lo = (road[0] - spec.sidewalk_width_m, road[0])
    sw_hi = (road[1], road[1] + spec.sidewalk_width_m)

    # cell centers
    xs = (np.arange(w_cells) + 0.5) * res
    ys = (np.arange(h_cells) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)

    classes = np.zeros((h_cells, w_cells), dtype=np.uint8)
    classes[(Y >= road[0]) & (Y < road[1])] = SurfaceClass.ROAD
    classes[(Y >= sw_lo[0]) & (Y < sw_lo[1])] = SurfaceClass.PEDESTRIAN
    classes[(Y >= sw_hi[0]) & (Y < sw_hi[1])] = SurfaceClass.PEDESTRIAN

    crossings = []
    n = spec.num_crossings
    for k in range(n):
        xc = spec.length_m * (k + 1) / (n + 1)
        xc += rng.uniform(-1.0, 1.0) * spec.length_m / (6 * (n + 1))
        x0, x1 = xc - spec.crossing_width_m / 2, xc + spec.crossing_width_m / 2
        crossings.append((x0, x1))
        band = (X >= x0) & (X < x1) & (Y >= road[0]) & (Y < road[1])
        classes[band] = SurfaceClass.CROSSING

    phase = (rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi))
    world = GroundTruthWorld(
        spec, classes, [], road, sw_lo, sw_hi, crossings, phase
    )

    obstacles = []
    wt, wh = spec.wall_thickness_m, spec.wall_height_m
    for y0 in (sw_lo[0] - wt, sw_hi[1]):
        obstacles.append(Box(0.0, spec.length_m, y0, y0 + wt, 0.0, wh))
    for _ in range(spec.obstacle_count):
        ox = rng.uniform(2.0, spec.length_m - 2.0)
        side = rng.integers(0, 2)
        band = sw_lo if side == 0 else sw_hi
        # wall-side fifth of the sidewalk keeps the centerline walkable
        frac = 0.2 if side == 0 else 0.8
        oy = band[0] + frac * (band[1] - band[0])
        half = rng.uniform(0.25, 0.4)
        height = rng.uniform(0.8, 1.3)
        z0 = float(world.height_at(ox, oy))
        obstacles.append(Box(ox - half, ox + half, oy - half, oy + half, z0, z0 + height))

    world.obstacles = obstacles
    for b in obstacles:
        i0 = max(0, int(np.floor(b.x_min / res)))
        i1 = min(w_cells, int(np.ceil(b.x_max / res)))
        j0 = max(0, int(np.floor(b.y_min / res)))
        j1 = min(h_cells, int(np.ceil(b.y_max / res)))
        classes[j0:j1, i0:i1] = SurfaceClass.OBSTACLE
    return world


def camera_rig(pitch_deg: float = 25.0, height_m: float = 1.6,
               forward_m: float = 0.1) -> RigidTransform:
    """base->camera transform: x-right / y-down / z-forward optics mounted
    forward_m ahead and height_m above the base origin, pitched down."""
    th = math.radians(pitch_deg)
    R = np.array(
        [
            [0.0, -1.0, 0.0],
            [-math.sin(th), 0.0, -math.cos(th)],
            [math.cos(th), 0.0, -math.sin(th)],
        ]
    )
    c = np.array([forward_m, 0.0, height_m])
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = -R @ c
    return RigidTransform.from_matrix(M)


DEFAULT_INTRINSICS = CameraIntrinsics(fx=110.0, fy=110.0, cx=80.0, cy=60.0,
                                      width=160, height=120)


class _Agent:
    """Deterministic piecewise-linear mover with bounded lateral sway."""

    def __init__(self, track_id, agent_class, waypoints, speed, t_start, sway, world):
        self.track_id = track_id
        self.agent_class = agent_class
        self.waypoints = np.asarray(waypoints, dtype=np.float64)
        self.speed = speed
        self.t_start = t_start
        self.sway_amp, self.sway_period, self.sway_phase = sway
        self.world = world
        seg = np.diff(self.waypoints, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.duration = self.cum[-1] / speed

    def present(self, t: float) -> bool:
        return t >= self.t_start and (t - self.t_start) <= self.duration

    def position(self, t: float) -> np.ndarray | None:
        """Ground point (x, y, z) at time t, or None when absent."""
        if not self.present(t):
            return None
        s = np.clip((t - self.t_start) * self.speed, 0.0, self.cum[-1])
        k = int(np.searchsorted(self.cum[1:-1], s, side="right"))
        denom = max(self.seg_len[k], 1e-12)
        frac = (s - self.cum[k]) / denom
        a, b = self.waypoints[k], self.waypoints[k + 1]
        p = a + frac * (b - a)
        tangent = (b - a) / denom
        normal = np.array([-tangent[1], tangent[0]])
        sway = self.sway_amp * math.sin(2 * math.pi * t / self.sway_period + self.sway_phase)
        cand = p + sway * normal
        legal = LEGAL_SURFACES[self.agent_class]
        if SurfaceClass(int(self.world.class_at(cand[0], cand[1]))) not in legal:
            cand = p
        z = float(self.world.height_at(cand[0], cand[1]))
        return np.array([cand[0], cand[1], z])

    def body_box(self, t: float) -> Box | None:
        p = self.position(t)
        if p is None:
            return None
        if self.agent_class is AgentClass.PEDESTRIAN:
            hx = hy = PED_HALF_XY
            height = PED_HEIGHT
        else:
            hx, hy, height = VEH_HALF_X, VEH_HALF_Y, VEH_HEIGHT
        return Box(p[0] - hx, p[0] + hx, p[1] - hy, p[1] + hy, p[2], p[2] + height)


@dataclass
class SimFrame:
    timestamp: float
    base_to_world: RigidTransform
    depth: DepthImage
    truth: AnnotationImage
    detections: list


@dataclass
class SimRun:
    world: GroundTruthWorld
    intrinsics: CameraIntrinsics
    base_to_cam: RigidTransform
    frames: list
    tracklets: list


def _slab(o: float, d: np.ndarray, lo: float, hi: float):
    with np.errstate(divide="ignore"):
        inv = 1.0 / d
    t0 = (lo - o) * inv
    t1 = (hi - o) * inv
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    parallel = d == 0
    if np.any(parallel):
        inside = (o >= lo) and (o <= hi)
        near = np.where(parallel, -np.inf if inside else np.inf, near)
        far = np.where(parallel, np.inf if inside else -np.inf, far)
    return near, far


def _ray_boxes(origin: np.ndarray, dirs: np.ndarray, boxes) -> np.ndarray:
    """Entry parameter of the nearest box hit per ray; +inf when none.

    dirs are unnormalized with camera-frame z = 1, so the parameter equals
    the camera-frame depth.
    """
    best = np.full(dirs.shape[:2], np.inf)
    for b in boxes:
        nx, fx = _slab(origin[0], dirs[..., 0], b.x_min, b.x_max)
        ny, fy = _slab(origin[1], dirs[..., 1], b.y_min, b.y_max)
        nz, fz = _slab(origin[2], dirs[..., 2], b.z_min, b.z_max)
        near = np.maximum(np.maximum(nx, ny), nz)
        far = np.minimum(np.minimum(fx, fy), fz)
        hit = (near <= far) & (near >= NEAR_M)
        best = np.where(hit & (near < best), near, best)
    return best


def _ray_ground(origin: np.ndarray, dirs: np.ndarray, world: GroundTruthWorld) -> np.ndarray:
    """Depth parameter of the ground intersection per ray; +inf when none."""
    dz = dirs[..., 2]
    if world.spec.terrain_amplitude_m == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (0.0 - origin[2]) / dz
        s = np.where((dz < 0) & (s >= NEAR_M), s, np.inf)
        return s
    # heightfield: fixed-step march to bracket, then bisect
    h, w = dirs.shape[:2]
    s = np.full((h, w), np.inf)
    step = world.resolution / 2
    ts = np.arange(NEAR_M, MAX_RANGE_M, step)
    prev_above = None
    prev_t = None
    lo = np.full((h, w), np.nan)
    hi = np.full((h, w), np.nan)
    for t in ts:
        p = origin[None, None, :] + t * dirs
        above = p[..., 2] > world.height_at(p[..., 0], p[..., 1])
        if prev_above is not None:
            crossed = prev_above & ~above & np.isnan(lo)
            lo[crossed] = prev_t
            hi[crossed] = t
        prev_above, prev_t = above, t
    found = ~np.isnan(lo)
    if found.any():
        lo_v, hi_v = lo[found], hi[found]
        d_f = dirs[found]
        for _ in range(45):
            mid = 0.5 * (lo_v + hi_v)
            p = origin[None, :] + mid[:, None] * d_f
            above = p[:, 2] > world.height_at(p[:, 0], p[:, 1])
            lo_v = np.where(above, mid, lo_v)
            hi_v = np.where(above, hi_v, mid)
        s[found] = 0.5 * (lo_v + hi_v)
    return s


def render_sensor_view(world: GroundTruthWorld, base_to_world: RigidTransform,
                       base_to_cam: RigidTransform, K: CameraIntrinsics,
                       dynamic_boxes=()):
    """(DepthImage, AnnotationImage): exact ray-cast depth and true classes.

    Rays hitting boxes (walls, obstacles, agent bodies) are OBSTACLE; rays
    hitting ground take the BEV class under the hit point; rays escaping
    the range limit are invalid depth / UNKNOWN.
    """
    cam_to_world = base_to_world.compose(base_to_cam.invert())
    origin = cam_to_world.apply(np.zeros(3))
    R = cam_to_world.rotation_matrix()
    us, vs = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
    dirs = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)
    dirs = dirs @ R.T

    s_ground = _ray_ground(origin, dirs, world)
    s_boxes = _ray_boxes(origin, dirs, list(world.obstacles) + list(dynamic_boxes))

    s = np.minimum(s_ground, s_boxes)
    valid = np.isfinite(s) & (s <= MAX_RANGE_M)

    classes = np.zeros((K.height, K.width), dtype=np.uint8)
    box_hit = valid & (s_boxes <= s_ground)
    classes[box_hit] = SurfaceClass.OBSTACLE
    ground_hit = valid & ~box_hit
    if ground_hit.any():
        p = origin[None, :] + s[ground_hit][:, None] * dirs[ground_hit]
        classes[ground_hit] = world.class_at(p[:, 0], p[:, 1])

    depth = np.where(valid, s, 0.0)
    return DepthImage(depth), AnnotationImage(classes)


def _project_box_detection(box: Box, track_id, agent_class, t,
                           base_to_world: RigidTransform, base_to_cam: RigidTransform,
                           K: CameraIntrinsics):
    corners = np.array(
        [
            [x, y, z]
            for x in (box.x_min, box.x_max)
            for y in (box.y_min, box.y_max)
            for z in (box.z_min, box.z_max)
        ]
    )
    cam = base_to_cam.compose(base_to_world.invert())
    pc = cam.apply(corners)
    if np.any(pc[:, 2] < NEAR_M):
        return None  # partially behind the camera: no exact box, skip
    u = K.fx * pc[:, 0] / pc[:, 2] + K.cx
    v = K.fy * pc[:, 1] / pc[:, 2] + K.cy
    u0, u1 = max(0.0, float(u.min())), min(float(K.width), float(u.max()))
    v0, v1 = max(0.0, float(v.min())), min(float(K.height), float(v.max()))
    if u1 - u0 < 2.0 or v1 - v0 < 2.0:
        return None
    return DetectionBox(track_id, agent_class, t, u0, v0, u1, v1)


def _build_agents(world: GroundTruthWorld, num_pedestrians: int, num_vehicles: int,
                  rng) -> list:
    spec = world.spec
    agents = []
    y_lo = 0.5 * (world.sidewalk_lower[0] + world.sidewalk_lower[1])
    y_hi = 0.5 * (world.sidewalk_upper[0] + world.sidewalk_upper[1])
    for k in range(num_pedestrians):
        side_lower = k % 2 == 0
        y_a, y_b = (y_lo, y_hi) if side_lower else (y_hi, y_lo)
        direction = 1 if (k // 2) % 2 == 0 else -1
        x0 = rng.uniform(4.0, spec.length_m - 4.0)
        if world.crossings:
            c0, c1 = world.crossings[k % len(world.crossings)]
            xc = 0.5 * (c0 + c1)
            x_far = float(np.clip(xc + direction * rng.uniform(8.0, 16.0), 2.0, spec.length_m - 2.0))
            wps = [(x0, y_a), (xc, y_a), (xc, y_b), (x_far, y_b)]
        else:
            x_far = float(np.clip(x0 + direction * rng.uniform(10.0, 25.0), 2.0, spec.length_m - 2.0))
            wps = [(x0, y_a), (x_far, y_a)]
        sway = (abs(rng.normal(0, 0.1)), rng.uniform(3.0, 6.0), rng.uniform(0, 2 * np.pi))
        agents.append(
            _Agent(100 + k, AgentClass.PEDESTRIAN, wps, rng.uniform(0.9, 1.4),
                   rng.uniform(0.0, 2.0), sway, world)
        )
    yc = 0.5 * (world.road_band[0] + world.road_band[1])
    lane_off = spec.road_width_m / 4
    for k in range(num_vehicles):
        lane_lower = k % 2 == 0
        y = yc - lane_off if lane_lower else yc + lane_off
        direction = 1 if lane_lower else -1
        xs = (1.0, spec.length_m - 1.0) if direction == 1 else (spec.length_m - 1.0, 1.0)
        sway = (abs(rng.normal(0, 0.1)), rng.uniform(4.0, 8.0), rng.uniform(0, 2 * np.pi))
        agents.append(
            _Agent(200 + k, AgentClass.VEHICLE, [(xs[0], y), (xs[1], y)],
                   rng.uniform(5.0, 8.0), k * 2.5, sway, world)
        )
    return agents


def heading_transform(x, y, z, yaw) -> RigidTransform:
    """base->world pose at a ground point with the given heading."""
    half = yaw / 2
    return RigidTransform(np.array([math.cos(half), 0.0, 0.0, math.sin(half)]),
                          np.array([x, y, z]))


def simulate_run(world: GroundTruthWorld, route=None, frame_rate_hz: float = 2.0,
                 speed_mps: float = 1.2, num_pedestrians: int = 4,
                 num_vehicles: int = 3, K: CameraIntrinsics = DEFAULT_INTRINSICS,
                 base_to_cam: RigidTransform | None = None,
                 tracklet_interval_s: float = 0.5, seed: int | None = None,
                 depth_stride: int = 1) -> SimRun:
    """Walk the ego along a sidewalk route and record every sensor channel.

    route: (N, 2) waypoints on legal ego surfaces; defaults to the full
    lower sidewalk centerline. The run ends when the ego reaches the last
    waypoint. depth_stride > 1 blanks depth rows in between, simulating
    sparse scanlines.
    """
    spec = world.spec
    if base_to_cam is None:
        base_to_cam = camera_rig()
    if route is None:
        y = 0.5 * (world.sidewalk_lower[0] + world.sidewalk_lower[1])
        route = [(3.0, y), (spec.length_m - 3.0, y)]
    route = np.asarray(route, dtype=np.float64)
    legal = LEGAL_SURFACES[AgentClass.EGO]
    for x, y in route:
        if SurfaceClass(int(world.class_at(x, y))) not in legal:
            raise RouteOffSurface(f"waypoint ({x:.2f}, {y:.2f}) is not walkable")

    rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed if seed is None else seed, spawn_key=(1,))
    )
    agents = _build_agents(world, num_pedestrians, num_vehicles, rng)

    ego = _Agent(0, AgentClass.EGO, route, speed_mps, 0.0, (0.0, 1.0, 0.0), world)
    duration = ego.duration
    n_frames = int(math.floor(duration * frame_rate_hz)) + 1

    frames = []
    for f in range(n_frames):
        t = f / frame_rate_hz
        p = ego.position(min(t, duration))
        # heading from the route tangent at the current arc position
        s = np.clip(t * speed_mps, 0.0, ego.cum[-1])
        k = int(np.searchsorted(ego.cum[1:-1], s, side="right"))
        seg = ego.waypoints[k + 1] - ego.waypoints[k]
        yaw = math.atan2(seg[1], seg[0])
        pose = heading_transform(p[0], p[1], p[2], yaw)

        boxes, detections = [], []
        for agent in agents:
            body = agent.body_box(t)
            if body is None:
                continue
            boxes.append(body)
            det = _project_box_detection(body, agent.track_id, agent.agent_class, t,
                                         pose, base_to_cam, K)
            if det is not None:
                detections.append(det)

        depth, truth = render_sensor_view(world, pose, base_to_cam, K, boxes)
        if depth_stride > 1:
            keep = np.zeros_like(depth.values, dtype=bool)
            keep[::depth_stride, :] = True
            depth = DepthImage(np.where(keep, depth.values, 0.0))
        frames.append(SimFrame(t, pose, depth, truth, detections))

    tracklets = []
    times = np.arange(0.0, duration + 1e-9, tracklet_interval_s)
    for agent in agents:
        ts, pts = [], []
        for t in times:
            p = agent.position(t)
            if p is not None:
                ts.append(t)
                pts.append(p)
        if len(pts) >= 2:
            width = (PED_HALF_XY * 2 if agent.agent_class is AgentClass.PEDESTRIAN
                     else VEH_HALF_Y * 2)
            tracklets.append(
                Tracklet(agent.track_id, agent.agent_class, np.array(ts),
                         np.array(pts), width)
            )
    return SimRun(world, K, base_to_cam, frames, tracklets)


def prediction_oracle(truth: AnnotationImage, accuracy: float, seed: int,
                      num_classes: int = NUM_CLASSES) -> PredictionImage:
    """Noisy stand-in for a trained segmentation model.

    Per labeled pixel: with probability `accuracy` the emitted vector peaks
    on the true class, otherwise on a uniformly random wrong class; the
    peak carries `accuracy` mass and the remainder spreads evenly. UNKNOWN
    pixels carry no prediction.
    """
    if not (1.0 / num_classes <= accuracy <= 1.0):
        raise ValueError(f"accuracy must be in [1/{num_classes}, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    h, w = truth.classes.shape
    valid = truth.classes != SurfaceClass.UNKNOWN

    true_ch = np.clip(truth.classes.astype(int) - 1, 0, num_classes - 1)
    correct = rng.random((h, w)) < accuracy
    # uniformly random wrong class: shift by 1..K-1 modulo K
    shift = rng.integers(1, num_classes, size=(h, w))
    peak = np.where(correct, true_ch, (true_ch + shift) % num_classes)

    probs = np.full((h, w, num_classes), 1.0 / num_classes)
    rest = (1.0 - accuracy) / (num_classes - 1)
    rows, cols = np.nonzero(valid)
    probs[valid] = rest
    probs[rows, cols, peak[rows, cols]] = accuracy
    return PredictionImage(probs, valid)
