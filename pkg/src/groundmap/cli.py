"""Command-line pipeline: simulate, annotate, fuse, render, eval, plan.

Every subcommand is deterministic given its inputs and the config seed,
writes an effective_config.json next to its artifacts, and exits nonzero
with a one-line machine-parseable error (``ERROR class=<Name> msg=...``)
on failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .annotate import (
    AgentClass,
    AnnotationImage,
    PixelSet,
    SurfaceClass,
    Tracklet,
    build_ribbon,
    compose_annotation,
    label_obstacles,
    rasterize_ribbon,
)
from .config import PipelineConfig
from .errors import DegenerateCloud, MissingInput, PipelineError
from .evaluate import (
    ConfusionMatrix,
    class_metrics,
    compare_bev,
    confusion,
    coverage_fraction,
)
from .formats import (
    frame_name,
    read_bev_raster,
    read_calib_file,
    read_depth_png,
    read_detections_csv,
    read_mask_png,
    read_pose_file,
    read_prediction,
    read_tmap,
    read_tracklets_csv,
    write_bev_raster,
    write_calib_file,
    write_depth_png,
    write_detections_csv,
    write_mask_png,
    write_mesh_file,
    write_pose_file,
    write_prediction,
    write_tmap,
    write_tracklets_csv,
)
from .fuse import SurfaceMap, accumulate_frame, finalize_map
from .geometry import GroundPlane, backproject_pixels, densify_depth, fit_ground_plane
from .mesh import render_mesh, taubin_smooth, triangulate_map
from .plan import astar, gaussian_smooth, map_to_costmap, path_world_coordinates
from .sim import WorldSpec, generate_world, prediction_oracle, simulate_run


def _frame_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(stream, index)).generate_state(1)[0])


def _pool_size(cfg: PipelineConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _run_frames(cfg, work, n_frames):
    """Run per-frame work deterministically, optionally thread-parallel."""
    workers = _pool_size(cfg)
    if workers <= 1 or n_frames <= 1:
        return [work(i) for i in range(n_frames)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, range(n_frames)))


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg.apply_override(key.strip(), value.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _emit_config(cfg: PipelineConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(cfg.to_json())


def _load_run(run_dir: Path):
    K, base_to_cam = read_calib_file(run_dir / "calib.txt")
    poses = read_pose_file(run_dir / "poses.txt")
    return K, base_to_cam, poses


def _frame_cloud_and_plane(cfg, run_dir, index, pose, cam_to_base, K):
    """Densified depth, backprojected cloud, and the frame's ground plane.

    Frames dominated by vertical structure can leave RANSAC without a
    near-horizontal candidate; the base-on-ground pose convention then
    provides the fallback plane through the ego's own feet.
    """
    depth = read_depth_png(run_dir / "depth" / f"{frame_name(index)}.png")
    dense = densify_depth(depth, cfg.densify_radius_px)
    rows, cols = np.nonzero(dense.valid)
    uv = np.stack([cols + 0.5, rows + 0.5], axis=1)
    cloud = backproject_pixels(uv, dense.values[rows, cols], pose, cam_to_base, K)
    stride = max(1, len(cloud) // 5000)
    try:
        plane = fit_ground_plane(
            cloud[::stride],
            iterations=cfg.ransac_iterations,
            inlier_threshold_m=cfg.ransac_inlier_threshold_m,
            seed=_frame_seed(cfg.seed, 2, index),
            max_tilt_deg=cfg.ransac_max_tilt_deg,
        )
    except DegenerateCloud:
        plane = GroundPlane(np.array([0.0, 0.0, 1.0]), float(pose.translation[2]))
    return dense, cloud, plane


# ------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _emit_config(cfg, out)

    spec = WorldSpec(
        seed=cfg.seed,
        length_m=args.length,
        width_m=args.width,
        road_width_m=args.road_width,
        sidewalk_width_m=args.sidewalk_width,
        num_crossings=args.crossings,
        obstacle_count=args.obstacles,
        terrain_amplitude_m=args.terrain_amplitude,
        resolution_m=cfg.map_resolution_m,
    )
    world = generate_world(spec)
    y_route = 0.5 * (world.sidewalk_lower[0] + world.sidewalk_lower[1])
    route = [(args.route_margin, y_route), (args.length - args.route_margin, y_route)]
    run = simulate_run(
        world,
        route=route,
        frame_rate_hz=args.frame_rate,
        num_pedestrians=args.pedestrians,
        num_vehicles=args.vehicles,
        depth_stride=args.depth_stride,
    )

    write_calib_file(out / "calib.txt", run.intrinsics, run.base_to_cam)
    write_pose_file(out / "poses.txt", [(f.timestamp, f.base_to_world) for f in run.frames])
    write_tracklets_csv(out / "tracklets.csv", run.tracklets)
    write_detections_csv(
        out / "detections.csv", [d for f in run.frames for d in f.detections]
    )
    (out / "depth").mkdir(exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    (out / "predictions").mkdir(exist_ok=True)
    for i, frame in enumerate(run.frames):
        write_depth_png(out / "depth" / f"{frame_name(i)}.png", frame.depth)
        write_mask_png(out / "gt" / f"{frame_name(i)}.png", frame.truth)
        if args.oracle_accuracy > 0:
            pred = prediction_oracle(
                frame.truth, args.oracle_accuracy, seed=_frame_seed(cfg.seed, 3, i)
            )
            write_prediction(out / "predictions", i, pred)
    write_bev_raster(out / "gt" / "bev_map.png", out / "gt" / "bev_map.json",
                     world.classes, 0.0, 0.0, world.resolution)
    (out / "world.json").write_text(json.dumps({
        "spec": {k: getattr(spec, k) for k in (
            "seed", "length_m", "width_m", "road_width_m", "sidewalk_width_m",
            "num_crossings", "crossing_width_m", "obstacle_count",
            "terrain_amplitude_m", "resolution_m", "wall_height_m", "wall_thickness_m")},
        "frames": len(run.frames),
        "oracle_accuracy": args.oracle_accuracy,
    }, indent=2) + "\n")
    print(f"simulated {len(run.frames)} frames into {out}")
    return 0


# ------------------------------------------------------------- annotate

def cmd_annotate(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run)
    out = Path(args.out)
    _emit_config(cfg, out)
    masks = out / "d0"
    masks.mkdir(parents=True, exist_ok=True)

    K, base_to_cam, poses = _load_run(run_dir)
    cam_to_base = base_to_cam.invert()
    tracklets = read_tracklets_csv(run_dir / "tracklets.csv", cfg.base_widths())
    detections = read_detections_csv(run_dir / "detections.csv")
    # attach each detection to the nearest frame (1 ms slack tolerates
    # exporters that format timestamps differently from the pose file)
    frame_times = np.array([t for t, _ in poses])
    dets_by_frame = {}
    for det in detections:
        idx = int(np.argmin(np.abs(frame_times - det.timestamp)))
        if abs(frame_times[idx] - det.timestamp) <= 1e-3:
            dets_by_frame.setdefault(idx, []).append(det)

    ego = Tracklet(
        0, AgentClass.EGO,
        np.array([t for t, _ in poses]),
        np.array([p.translation for _, p in poses]),
        cfg.ego_base_width_m,
    )
    ego_ribbon = build_ribbon(ego)
    ped_ribbons = [build_ribbon(t) for t in tracklets
                   if t.agent_class is AgentClass.PEDESTRIAN and len(t.points) >= 2]
    veh_ribbons = [build_ribbon(t) for t in tracklets
                   if t.agent_class is AgentClass.VEHICLE and len(t.points) >= 2]

    def work(i):
        _, pose = poses[i]
        world_to_base = pose.invert()
        _, cloud, plane = _frame_cloud_and_plane(cfg, run_dir, i, pose, cam_to_base, K)

        s_ego = rasterize_ribbon(ego_ribbon, world_to_base, base_to_cam, K)
        s_ped = PixelSet.empty(K.width, K.height)
        for rib in ped_ribbons:
            s_ped = s_ped | rasterize_ribbon(rib, world_to_base, base_to_cam, K)
        s_veh = PixelSet.empty(K.width, K.height)
        for rib in veh_ribbons:
            s_veh = s_veh | rasterize_ribbon(rib, world_to_base, base_to_cam, K)
        s_obst = label_obstacles(
            cloud, world_to_base, base_to_cam, K, plane,
            boxes=dets_by_frame.get(i, []),
            height_threshold_m=cfg.obstacle_height_m,
            splat_radius_px=cfg.splat_radius_px,
        )
        ann = compose_annotation(s_ego, s_ped, s_veh, s_obst)
        ego_only = compose_annotation(
            s_ego, PixelSet.empty(K.width, K.height), PixelSet.empty(K.width, K.height), s_obst
        )
        write_mask_png(masks / f"{frame_name(i)}.png", ann,
                       color_path=masks / f"{frame_name(i)}_color.png")
        return {
            "frame": i,
            "coverage": coverage_fraction(ann),
            "coverage_ego_only": coverage_fraction(ego_only),
        }

    records = _run_frames(cfg, work, len(poses))
    report = {
        "frames": len(records),
        "mean_coverage": float(np.mean([r["coverage"] for r in records])),
        "mean_coverage_ego_only": float(np.mean([r["coverage_ego_only"] for r in records])),
        "per_frame": records,
    }
    (out / "coverage.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"annotated {len(records)} frames; mean coverage {report['mean_coverage']:.3f}")
    return 0


# ------------------------------------------------------------- fuse

def _map_georef(cfg, args, all_poses):
    if args.like:
        meta = json.loads(Path(args.like).read_text())
        return SurfaceMap(
            origin_x=meta["origin_x"], origin_y=meta["origin_y"],
            resolution=meta["resolution"], width=meta["width"], height=meta["height"],
        )
    pts = np.array([p.translation[:2] for _, p in all_poses])
    lo = pts.min(axis=0) - cfg.map_margin_m
    hi = pts.max(axis=0) + cfg.map_margin_m
    res = cfg.map_resolution_m
    width = int(math.ceil((hi[0] - lo[0]) / res))
    height = int(math.ceil((hi[1] - lo[1]) / res))
    return SurfaceMap(origin_x=float(lo[0]), origin_y=float(lo[1]),
                      resolution=res, width=width, height=height)


def cmd_fuse(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _emit_config(cfg, out)
    run_dirs = [Path(r) for r in args.run]

    loaded = [(_load_run(r), r) for r in run_dirs]
    all_poses = [p for (_, _, poses), _ in loaded for p in poses]
    smap = _map_georef(cfg, args, all_poses)

    totals = {"updated": 0, "dropped": 0, "frames": 0, "frames_outside": 0}
    for (K, base_to_cam, poses), run_dir in loaded:
        cam_to_base = base_to_cam.invert()
        pred_dir = Path(args.predictions) if args.predictions else run_dir / "predictions"
        for i, (t, pose) in enumerate(poses):
            dense, _, plane = _frame_cloud_and_plane(cfg, run_dir, i, pose, cam_to_base, K)
            pred = read_prediction(pred_dir, i)
            stats = accumulate_frame(
                smap, pred, dense, pose, cam_to_base, K, plane,
                ground_band_m=cfg.obstacle_height_m, eps=cfg.logodds_eps,
            )
            totals["updated"] += stats["updated"]
            totals["dropped"] += stats["dropped"]
            totals["frames"] += 1
            totals["frames_outside"] += int(stats["outside_map"])

    write_tmap(out / "map.tmap", smap)
    classes, elevation = finalize_map(smap)
    write_bev_raster(out / "map_classes.png", out / "map_classes.json",
                     classes, smap.origin_x, smap.origin_y, smap.resolution)
    from PIL import Image

    Image.fromarray(AnnotationImage(classes).to_color(), mode="RGB").save(out / "map_color.png")
    totals["observed_cells"] = int((classes != SurfaceClass.UNKNOWN).sum())
    (out / "fuse_report.json").write_text(json.dumps(totals, indent=2) + "\n")
    print(f"fused {totals['frames']} frames; {totals['observed_cells']} observed cells")
    return 0


# ------------------------------------------------------------- render

def cmd_render(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _emit_config(cfg, out)
    run_dir = Path(args.run)
    masks = out / "d1"
    masks.mkdir(parents=True, exist_ok=True)

    smap = read_tmap(args.map)
    classes, elevation = finalize_map(smap)
    mesh = triangulate_map(classes, elevation, smap.origin_x, smap.origin_y,
                           smap.resolution, cfg.mesh_max_edge_factor)
    mesh = taubin_smooth(mesh, cfg.taubin_lambda, cfg.taubin_mu, cfg.taubin_iterations)
    write_mesh_file(out / "surface.mesh", mesh)

    K, base_to_cam, poses = _load_run(run_dir)
    frame_ids = list(range(0, len(poses), args.every))
    d0_dir = Path(args.d0) if args.d0 else None

    def work(k):
        i = frame_ids[k]
        _, pose = poses[i]
        rendered = render_mesh(mesh, pose.invert(), base_to_cam, K)
        write_mask_png(masks / f"{frame_name(i)}.png", rendered.annotation,
                       color_path=masks / f"{frame_name(i)}_color.png")
        rec = {"frame": i, "d1_coverage": coverage_fraction(rendered.annotation)}
        if d0_dir is not None:
            d0 = read_mask_png(d0_dir / f"{frame_name(i)}.png")
            rec["d0_coverage"] = coverage_fraction(d0)
        return rec

    records = _run_frames(cfg, work, len(frame_ids))
    report = {
        "frames": len(records),
        "mesh_vertices": mesh.num_vertices,
        "mesh_faces": mesh.num_faces,
        "mean_d1_coverage": float(np.mean([r["d1_coverage"] for r in records])),
        "per_frame": records,
    }
    if d0_dir is not None:
        report["mean_d0_coverage"] = float(np.mean([r["d0_coverage"] for r in records]))
        report["d1_exceeds_d0_fraction"] = float(
            np.mean([r["d1_coverage"] > r["d0_coverage"] for r in records])
        )
    (out / "coverage.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"rendered {len(records)} frames; mean D1 coverage "
          f"{report['mean_d1_coverage']:.3f}")
    return 0


# ------------------------------------------------------------- eval

def _print_metrics(title, metrics):
    print(title)
    print(f"  {'class':<12}{'IoU':>8}{'prec':>8}{'recall':>8}  supported")
    d = metrics.as_dict()
    for name, row in d["per_class"].items():
        print(f"  {name:<12}{row['iou']:>8.3f}{row['precision']:>8.3f}"
              f"{row['recall']:>8.3f}  {row['supported']}")
    print(f"  mean IoU: {d['mean_iou']:.4f}")


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _emit_config(cfg, out)

    result = {}
    if args.pred_dir and args.gt_dir:
        pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
        frames = sorted(
            p.name for p in pred_dir.glob("frame_*.png") if "_color" not in p.name
        )
        if not frames:
            raise MissingInput(f"no frame masks in {pred_dir}")
        cm = ConfusionMatrix()
        cov_pred, cov_gt = [], []
        for name in frames:
            pred = read_mask_png(pred_dir / name)
            gt = read_mask_png(gt_dir / name)
            cm = cm + confusion(pred, gt)
            cov_pred.append(coverage_fraction(pred))
            cov_gt.append(coverage_fraction(gt))
        metrics = class_metrics(cm)
        result = {
            "mode": "masks",
            "frames": len(frames),
            "metrics": metrics.as_dict(),
            "mean_coverage_pred": float(np.mean(cov_pred)),
            "mean_coverage_gt": float(np.mean(cov_gt)),
            "confusion": cm.counts.tolist(),
        }
        _print_metrics(f"mask metrics over {len(frames)} frames", metrics)
    elif args.map and args.gt_bev:
        smap = read_tmap(args.map)
        classes, _ = finalize_map(smap)
        gt_png = Path(args.gt_bev)
        gt, gt_geo = read_bev_raster(gt_png, gt_png.with_suffix(".json"))
        cmp = compare_bev(classes, (smap.origin_x, smap.origin_y, smap.resolution),
                          gt, gt_geo)
        result = {
            "mode": "bev",
            "observed_cells": cmp.observed_cells,
            "full": cmp.full.as_dict(),
            "observed_only": cmp.observed_only.as_dict(),
        }
        _print_metrics("BEV metrics (all labeled gt cells)", cmp.full)
        _print_metrics("BEV metrics (observed cells only)", cmp.observed_only)
    else:
        raise MissingInput("eval needs --pred-dir+--gt-dir or --map+--gt-bev")

    (out / "metrics.json").write_text(json.dumps(result, indent=2) + "\n")
    return 0


# ------------------------------------------------------------- plan

def cmd_plan(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _emit_config(cfg, out)

    smap = read_tmap(args.map)
    classes, _ = finalize_map(smap)
    cm = map_to_costmap(classes, cfg.cost_table(), smap.origin_x, smap.origin_y,
                        smap.resolution)
    if cfg.costmap_sigma_cells > 0:
        cm = gaussian_smooth(cm, cfg.costmap_sigma_cells)

    sx, sy = (float(v) for v in args.start.split(","))
    gx, gy = (float(v) for v in args.goal.split(","))
    path = astar(cm, cm.world_to_cell(sx, sy), cm.world_to_cell(gx, gy))
    coords = path_world_coordinates(cm, path)

    (out / "path.txt").write_text(
        "\n".join(f"{x!r} {y!r}" for x, y in coords.tolist()) + "\n"
    )
    overlay = AnnotationImage(classes).to_color()
    for i, j in path.cells:
        overlay[j, i] = (255, 255, 255)
    from PIL import Image

    Image.fromarray(overlay, mode="RGB").save(out / "overlay.png")
    (out / "plan_report.json").write_text(json.dumps({
        "start": [sx, sy], "goal": [gx, gy],
        "cells": len(path.cells), "total_cost": path.total_cost,
    }, indent=2) + "\n")
    print(f"planned {len(path.cells)} cells, cost {path.total_cost:.3f}")
    return 0


# ------------------------------------------------------------- entry

def _add_common(sub):
    sub.add_argument("--config", help="pipeline config JSON")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config value (repeatable)")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="groundmap")
    sp = ap.add_subparsers(dest="command", required=True)

    sim = sp.add_parser("simulate", help="generate a synthetic run directory")
    _add_common(sim)
    sim.add_argument("--length", type=float, default=60.0)
    sim.add_argument("--width", type=float, default=24.0)
    sim.add_argument("--road-width", type=float, default=7.0)
    sim.add_argument("--sidewalk-width", type=float, default=3.0)
    sim.add_argument("--crossings", type=int, default=2)
    sim.add_argument("--obstacles", type=int, default=6)
    sim.add_argument("--pedestrians", type=int, default=4)
    sim.add_argument("--vehicles", type=int, default=3)
    sim.add_argument("--frame-rate", type=float, default=2.0)
    sim.add_argument("--route-margin", type=float, default=3.0,
                     help="ego route start/end distance from the world ends")
    sim.add_argument("--terrain-amplitude", type=float, default=0.0)
    sim.add_argument("--depth-stride", type=int, default=1)
    sim.add_argument("--oracle-accuracy", type=float, default=0.8,
                     help="prediction oracle accuracy; 0 disables predictions")
    sim.set_defaults(func=cmd_simulate)

    ann = sp.add_parser("annotate", help="produce sparse trajectory masks (D0)")
    _add_common(ann)
    ann.add_argument("--run", required=True, help="run directory")
    ann.set_defaults(func=cmd_annotate)

    fu = sp.add_parser("fuse", help="fuse predictions into a global map")
    _add_common(fu)
    fu.add_argument("--run", required=True, action="append",
                    help="run directory (repeatable for multi-run fusion)")
    fu.add_argument("--predictions", default=None,
                    help="predictions directory (default <run>/predictions)")
    fu.add_argument("--like", default=None,
                    help="JSON georeference to align the map grid with")
    fu.set_defaults(func=cmd_fuse)

    rd = sp.add_parser("render", help="reproject the fused map into frames (D1)")
    _add_common(rd)
    rd.add_argument("--run", required=True)
    rd.add_argument("--map", required=True, help="TMAP file")
    rd.add_argument("--d0", default=None, help="D0 mask dir for coverage comparison")
    rd.add_argument("--every", type=int, default=1, help="render every n-th frame")
    rd.set_defaults(func=cmd_render)

    ev = sp.add_parser("eval", help="metrics for masks or BEV maps")
    _add_common(ev)
    ev.add_argument("--pred-dir")
    ev.add_argument("--gt-dir")
    ev.add_argument("--map")
    ev.add_argument("--gt-bev", help="ground-truth BEV raster PNG (JSON sidecar beside it)")
    ev.set_defaults(func=cmd_eval)

    pl = sp.add_parser("plan", help="costmap + A* route on a fused map")
    _add_common(pl)
    pl.add_argument("--map", required=True)
    pl.add_argument("--start", required=True, metavar="X,Y")
    pl.add_argument("--goal", required=True, metavar="X,Y")
    pl.set_defaults(func=cmd_plan)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f'ERROR class={type(exc).__name__} msg="{exc}"', file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
