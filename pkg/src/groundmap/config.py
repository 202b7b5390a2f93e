"""Pipeline configuration: one seed, every tunable, strict round-trip.

Unknown keys are rejected so a stale config fails loudly instead of
silently running on defaults. The emitted effective-config file re-ingests
to identical behavior (JSON with Infinity allowed for the obstacle cost).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .annotate import SurfaceClass
from .errors import ConfigError


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 0  # 0 = one per logical core

    # geometry
    densify_radius_px: int = 8
    ransac_iterations: int = 200
    ransac_inlier_threshold_m: float = 0.05
    ransac_max_tilt_deg: float = 30.0

    # annotation
    obstacle_height_m: float = 0.20  # stixel threshold; also the fusion ground band
    pedestrian_base_width_m: float = 0.5
    vehicle_base_width_m: float = 2.0
    ego_base_width_m: float = 0.8
    splat_radius_px: int = 2

    # fusion map
    map_resolution_m: float = 0.25
    logodds_eps: float = 1e-6
    map_margin_m: float = 15.0  # auto-extent margin around the pose bounding box

    # mesh
    taubin_lambda: float = 0.5
    taubin_mu: float = -0.53
    taubin_iterations: int = 10
    mesh_max_edge_factor: float = 3.0

    # planning
    costmap_sigma_cells: float = 1.0
    cost_pedestrian: float = 1.0
    cost_crossing: float = 5.0
    cost_road: float = 100.0
    cost_unknown: float = 100.0
    cost_obstacle: float = math.inf

    def cost_table(self) -> dict:
        return {
            SurfaceClass.UNKNOWN: self.cost_unknown,
            SurfaceClass.ROAD: self.cost_road,
            SurfaceClass.PEDESTRIAN: self.cost_pedestrian,
            SurfaceClass.CROSSING: self.cost_crossing,
            SurfaceClass.OBSTACLE: self.cost_obstacle,
        }

    def base_widths(self) -> dict:
        from .annotate import AgentClass

        return {
            AgentClass.PEDESTRIAN: self.pedestrian_base_width_m,
            AgentClass.VEHICLE: self.vehicle_base_width_m,
            AgentClass.EGO: self.ego_base_width_m,
        }

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(fields)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            want = fields[key].type
            try:
                kwargs[key] = int(value) if want == "int" else float(value) if want == "float" else value
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text())

    def apply_override(self, key: str, raw: str) -> None:
        """Apply one --set key=value flag (flags win over the file)."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields:
            raise ConfigError(f"unknown config key: {key}")
        want = fields[key].type
        try:
            value = int(raw) if want == "int" else float(raw) if want == "float" else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        setattr(self, key, value)
