"""Command-line front end: simulate -> carve -> reconstruct -> evaluate.

All four subcommands are driven by a JSON config file and communicate only
through files in the configured output directory, so each stage can be run,
resumed, and tested in isolation.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import geom
from .carve import carve as carve_hull, extract_surface
from .capture import (Scene, load_corr, load_mask_pgm, matting_pipeline,
                      orbit_rig, save_corr, save_mask_pgm, simulate_view)
from .carve import AllCarved, NoSurface
from .evaluate import per_vertex_error, write_error_csv, write_error_ply
from .mesh import load_mesh, save_ply
from .optim import SceneData, StageSchedule, reconstruct
from .remesh import RemeshFailed

CONFIG_DOC = """\
config keys (JSON):
  units                "mm" or "normalized"; tolerances scale with the mesh
                       diagonal so both behave identically
  seed                 integer RNG seed (default 0)
  scene.mesh           path to the ground-truth mesh (OBJ or PLY)
  scene.eta            refractive index of the object, > 1
  scene.views          number of rig poses U around the y axis
  scene.camera.distance   camera distance from the origin
  scene.camera.fx/fy      focal lengths in pixels
  scene.camera.width/height  image size in pixels
  scene.monitor.distance  monitor distance behind the object
  scene.monitor.res       [res_u, res_v] monitor pixels
  scene.monitor.pitch     monitor pixel pitch in scene units
  scene.matting        true to emulate Gray-code environment matting
                       instead of writing exact correspondences
  carve.resolution     voxel grid resolution (default 128)
  carve.bbox           [[xmin,ymin,zmin],[xmax,ymax,zmax]] or null to infer
  schedule.stages      number of coarse-to-fine stages L
  schedule.iters       optimization iterations per stage
  schedule.lr_start/lr_end  learning rates as fractions of the diagonal
  schedule.momentum    Nesterov momentum coefficient
  weights              "auto", or an object with any of alpha/beta/gamma;
                       omitted components use the per-stage defaults
  paths.output_dir     directory for all produced files

unknown keys anywhere in the config are a hard error.
"""

_SCHEMA = {
    "units": None,
    "seed": None,
    "scene": {
        "mesh": None, "eta": None, "views": None, "matting": None,
        "camera": {"distance": None, "fx": None, "fy": None,
                   "width": None, "height": None},
        "monitor": {"distance": None, "res": None, "pitch": None},
    },
    "carve": {"resolution": None, "bbox": None},
    "schedule": {"stages": None, "iters": None, "lr_start": None,
                 "lr_end": None, "momentum": None},
    "weights": {"alpha": None, "beta": None, "gamma": None},
    "paths": {"output_dir": None},
}


class ConfigError(Exception):
    pass


def _check_keys(cfg, schema, prefix=""):
    for key, val in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(val, dict):
            _check_keys(val, sub, prefix + key + ".")


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    if isinstance(cfg.get("weights"), str) and cfg["weights"] != "auto":
        raise ConfigError('weights must be "auto" or an object')
    _check_keys(cfg, _SCHEMA)
    units = cfg.get("units", "normalized")
    if units not in ("mm", "normalized"):
        raise ConfigError('units must be "mm" or "normalized"')
    return cfg


def _apply_overrides(cfg, args):
    if getattr(args, "views", None) is not None:
        cfg.setdefault("scene", {})["views"] = args.views
    if getattr(args, "stages", None) is not None:
        cfg.setdefault("schedule", {})["stages"] = args.stages
    if getattr(args, "iters", None) is not None:
        cfg.setdefault("schedule", {})["iters"] = args.iters
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for comp in ("alpha", "beta", "gamma"):
        val = getattr(args, f"weights.{comp}", None)
        if val is not None:
            if not isinstance(cfg.get("weights"), dict):
                cfg["weights"] = {}
            cfg["weights"][comp] = val
    return cfg


def _out_dir(cfg):
    out = cfg.get("paths", {}).get("output_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _build_scene(cfg):
    sc = cfg["scene"]
    cam = sc["camera"]
    mon = sc["monitor"]
    gt = load_mesh(sc["mesh"])
    cameras, monitors = orbit_rig(
        int(sc["views"]), float(cam["distance"]), float(mon["distance"]),
        float(cam["fx"]), float(cam["fy"]),
        int(cam["width"]), int(cam["height"]),
        (int(mon["res"][0]), int(mon["res"][1])), float(mon["pitch"]))
    return Scene(gt, float(sc["eta"]), cameras, monitors)


def _scene_json(scene, cfg):
    return {
        "units": cfg.get("units", "normalized"),
        "eta": scene.eta,
        "views": scene.n_views,
        "cameras": [c.to_dict() for c in scene.cameras],
        "monitors": [m.to_dict() for m in scene.monitors],
    }


def _load_rig(out):
    path = os.path.join(out, "scene.json")
    with open(path) as fh:
        snap = json.load(fh)
    cams = [geom.Camera.from_dict(d) for d in snap["cameras"]]
    mons = [geom.MonitorPlane.from_dict(d) for d in snap["monitors"]]
    return snap, cams, mons


def cmd_simulate(cfg):
    scene = _build_scene(cfg)
    out = _out_dir(cfg)
    matting = bool(cfg["scene"].get("matting", False))
    from .accel import Bvh
    bvh = Bvh(scene.gt_mesh)
    for u in range(scene.n_views):
        cm, mask = simulate_view(scene, u, bvh)
        if matting:
            cm = matting_pipeline(scene, u, bvh=bvh)
        save_corr(os.path.join(out, f"view_{u:03d}.corr"), cm)
        save_mask_pgm(os.path.join(out, f"mask_{u:03d}.pgm"), mask)
    with open(os.path.join(out, "scene.json"), "w") as fh:
        json.dump(_scene_json(scene, cfg), fh, indent=2, sort_keys=True)
    print(f"simulated {scene.n_views} views into {out}")
    return 0


def cmd_carve(cfg):
    out = _out_dir(cfg)
    snap, cams, _ = _load_rig(out)
    masks = [load_mask_pgm(os.path.join(out, f"mask_{u:03d}.pgm"))
             for u in range(snap["views"])]
    cv = cfg.get("carve", {})
    bbox = cv.get("bbox")
    if bbox is not None:
        bbox = (np.asarray(bbox[0], float), np.asarray(bbox[1], float))
    grid = carve_hull(masks, cams, int(cv.get("resolution", 128)), bbox)
    n_occ = int(grid.occupancy.sum())
    nx, ny, nz = grid.resolution
    print(f"carved grid {nx}x{ny}x{nz}: {n_occ} of "
          f"{nx * ny * nz} voxels occupied")
    hull = extract_surface(grid)
    save_ply(os.path.join(out, "hull.ply"), hull)
    print(f"wrote hull.ply ({hull.n_vertices} vertices, "
          f"{hull.n_faces} faces)")
    return 0


def cmd_reconstruct(cfg):
    out = _out_dir(cfg)
    snap, cams, mons = _load_rig(out)
    corrs = [load_corr(os.path.join(out, f"view_{u:03d}.corr"))
             for u in range(snap["views"])]
    masks = [load_mask_pgm(os.path.join(out, f"mask_{u:03d}.pgm"))
             for u in range(snap["views"])]
    hull = load_mesh(os.path.join(out, "hull.ply"))
    data = SceneData(cams, mons, corrs, masks, float(snap["eta"]))
    sch = cfg.get("schedule", {})
    schedule = StageSchedule(
        n_stages=int(sch.get("stages", 10)),
        iters_per_stage=int(sch.get("iters", 500)),
        lr_start=float(sch.get("lr_start", 0.005)),
        lr_end=float(sch.get("lr_end", 0.002)),
        momentum=float(sch.get("momentum", 0.9)))
    weights = cfg.get("weights", "auto")
    if weights == "auto":
        weights = None
    final = reconstruct(hull, data, schedule, weights,
                        seed=int(cfg.get("seed", 0)), checkpoint_dir=out,
                        loss_log_path=os.path.join(out, "loss.csv"))
    save_ply(os.path.join(out, "final.ply"), final)
    print(f"wrote final.ply ({final.n_vertices} vertices, "
          f"{final.n_faces} faces)")
    return 0


def cmd_evaluate(cfg, recon_path, gt_path):
    out = _out_dir(cfg)
    recon = load_mesh(recon_path)
    gt = load_mesh(gt_path)
    report = per_vertex_error(recon, gt)
    write_error_csv(os.path.join(out, "error.csv"), report)
    write_error_ply(os.path.join(out, "error.ply"), recon, report)
    print(f"mean error {report.mean:.6g} "
          f"({report.mean_normalized:.6g} of the ground-truth diagonal)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="refrec",
        description="Reconstruct transparent objects from refraction "
                    "correspondences.",
        epilog=CONFIG_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--threads", type=int,
                       help="cap the worker pool at N threads")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded ordered reductions")

    p = sub.add_parser("simulate", help="render correspondences and masks")
    common(p)
    p.add_argument("--views", type=int, help="override scene.views")

    p = sub.add_parser("carve", help="carve the visual hull from masks")
    common(p)

    p = sub.add_parser("reconstruct", help="coarse-to-fine optimization")
    common(p)
    p.add_argument("--stages", type=int, help="override schedule.stages")
    p.add_argument("--iters", type=int, help="override schedule.iters")
    p.add_argument("--weights.alpha", type=float,
                   help="override refraction loss weight")
    p.add_argument("--weights.beta", type=float,
                   help="override silhouette loss weight")
    p.add_argument("--weights.gamma", type=float,
                   help="override smoothness loss weight")

    p = sub.add_parser("evaluate", help="per-vertex error against a GT mesh")
    common(p)
    p.add_argument("recon", help="reconstructed mesh path")
    p.add_argument("gt", help="ground-truth mesh path")
    return parser


def _configure_threads(args):
    import numba
    if args.deterministic:
        numba.set_num_threads(1)
    elif args.threads is not None:
        numba.set_num_threads(max(1, args.threads))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        _configure_threads(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "carve":
            return cmd_carve(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.recon, args.gt)
        raise ConfigError(f"unknown command {args.command}")
    except (AllCarved, NoSurface, RemeshFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
