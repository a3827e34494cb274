"""``worldmem`` command line.

Each subcommand resolves its settings from built-in defaults, then an
optional ``--config`` JSON file, then explicit flags, and writes the resolved
settings as ``config.json`` next to its outputs. Exit status is 0 on success,
2 on invalid input and 1 on internal failure; diagnostics are single lines
starting with ``error:``.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from worldmem.core import io as wio
from worldmem.core.types import CameraIntrinsics
from worldmem.evaluation import suppression_metrics, view_recall_eval
from worldmem.pipeline import (
    PipelineConfig,
    build_pair,
    load_frames,
    run_autoregressive,
    segment_clips,
    write_pair,
    write_run,
)
from worldmem.render import render_points, reveal_fraction
from worldmem.tsdf import FusionConfig, extract_static_points, fuse_frames, load_checkpoint, save_checkpoint
from worldmem.worldsim import (
    NoiseModel,
    PRESETS,
    build_scene,
    default_trajectory_params,
    make_trajectory,
    simulate,
)


class InputError(ValueError):
    """Invalid user input; maps to exit status 2."""


_SCENE = {
    "preset": (str, "room-with-mover"),
    "scene": (str, None),
    "seed": (int, 0),
    "width": (int, 160),
    "height": (int, 120),
    "hfov": (float, 60.0),
    "trajectory": (str, "orbit"),
    "sweep_deg": (float, None),
    "start_deg": (float, 0.0),
}
_NOISE = {
    "noise_rgb": (float, 0.0),
    "noise_depth": (float, 0.0),
    "noise_rot": (float, 0.0),
    "noise_trans": (float, 0.0),
}
_FUSION = {
    "voxel_size": (float, 0.04),
    "truncation": (float, None),
    "min_weight": (float, 3.0),
    "surface_band": (float, 0.25),
    "variance_cap": (float, 0.15),
    "variance_filter": (bool, True),
    "max_grid_dim": (int, 1200),
}

SCHEMAS = {
    "simulate": {**_SCENE, **_NOISE, "frames": (int, 60)},
    "fuse": dict(_FUSION),
    "render": {"splat_radius": (int, 1)},
    "run": {
        **_SCENE,
        **_NOISE,
        **_FUSION,
        "trajectory": (str, "forward-reverse"),
        "steps": (int, 3),
        "chunk": (int, 49),
        "context": (int, 5),
        "theta": (float, 0.3),
        "capacity": (int, 64),
        "splat_radius": (int, 1),
        "alignment": (str, "known-poses"),
        "spatial_memory": (bool, True),
    },
    "segment": {"clip_length": (int, 97), "source_length": (int, 49)},
    "build-pairs": {**_FUSION, "splat_radius": (int, 1)},
    "eval-recall": {"trajectory_length": (int, None)},
    "eval-suppression": {**_FUSION, "inflate": (float, None)},
}


def _check_type(key: str, value, typ, where: str):
    if value is None:
        return None
    if typ is bool:
        ok = isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise InputError(f"{where}: {key} must be of type {typ.__name__}")
    return value


def resolve_config(command: str, flags: dict, config_path: Optional[str] = None) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    schema = SCHEMAS[command]
    cfg = {k: d for k, (_, d) in schema.items()}
    if config_path is not None:
        if not os.path.exists(config_path):
            raise InputError(f"config file not found: {config_path}")
        data = wio.read_json(config_path)
        if not isinstance(data, dict):
            raise InputError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(data) - set(schema))
        if unknown:
            raise InputError(f"{config_path}: unknown config key(s) for {command}: {', '.join(unknown)}")
        for k, v in data.items():
            cfg[k] = _check_type(k, v, schema[k][0], config_path)
    for k, v in flags.items():
        if k in schema:
            cfg[k] = _check_type(k, v, schema[k][0], "--" + k.replace("_", "-"))
    return cfg


# ------------------------------------------------------------------ builders


def _fusion(cfg: dict) -> FusionConfig:
    return FusionConfig(
        truncation=cfg["truncation"],
        max_grid_dim=cfg["max_grid_dim"],
        min_weight=cfg["min_weight"],
        surface_band=cfg["surface_band"],
        variance_cap=cfg["variance_cap"],
        variance_filter=cfg["variance_filter"],
    )


def _noise(cfg: dict) -> NoiseModel:
    return NoiseModel(cfg["noise_rgb"], cfg["noise_depth"], cfg["noise_rot"], cfg["noise_trans"], cfg["seed"])


def _scene(cfg: dict):
    if cfg["scene"] is not None:
        if not os.path.exists(cfg["scene"]):
            raise InputError(f"scene file not found: {cfg['scene']}")
        return build_scene(cfg["seed"], "custom", wio.read_json(cfg["scene"]))
    if cfg["preset"] not in PRESETS:
        raise InputError(f"unknown preset {cfg['preset']!r}; choose from {', '.join(PRESETS)}")
    return build_scene(cfg["seed"], cfg["preset"])


def _trajectory(cfg: dict, scene, n: int):
    params = default_trajectory_params(scene)
    params["start_deg"] = cfg["start_deg"]
    params["seed"] = cfg["seed"]
    if cfg["sweep_deg"] is not None:
        params["sweep_deg"] = cfg["sweep_deg"]
    elif cfg["trajectory"] == "forward-reverse":
        params["sweep_deg"] = 120.0
    return make_trajectory(cfg["trajectory"], n, **params)


def _require_dir(path: str, what: str) -> None:
    if not os.path.isdir(path):
        raise InputError(f"{what} not found: {path}")


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------- subcommands


def cmd_simulate(cfg: dict, args) -> None:
    scene = _scene(cfg)
    intr = CameraIntrinsics.from_fov(cfg["width"], cfg["height"], cfg["hfov"])
    poses = _trajectory(cfg, scene, cfg["frames"])
    frames, masks = simulate(scene, poses, intr, _noise(cfg), threads=args.threads)
    out = args.out
    for f, m in zip(frames, masks):
        wio.write_image(os.path.join(out, "frames", f"{f.index:04d}.ppm"), f.image)
        wio.write_depth(os.path.join(out, "depth", f"{f.index:04d}.pfm"), f.depth)
        wio.write_mask(os.path.join(out, "static", f"{f.index:04d}.ppm"), m)
    # poses as a reconstruction would report them, plus the commanded path
    wio.write_trajectory(os.path.join(out, "trajectory.json"), [f.pose for f in frames])
    wio.write_trajectory(os.path.join(out, "trajectory_commanded.json"), poses)
    wio.write_intrinsics(os.path.join(out, "intrinsics.json"), intr)
    wio.write_json(os.path.join(out, "scene.json"), scene.to_dict())
    wio.write_json(os.path.join(out, "manifest.json"), {
        "frame_count": len(frames),
        "trajectory_length": len(poses),
        "frame_range": [0, len(frames) - 1],
        "dynamic_objects": len(scene.dynamic),
    })
    _log(f"simulate: wrote {len(frames)} frames to {out}")


def _read_frame_dir(path: str):
    _require_dir(path, "frame directory")
    for name in ("trajectory.json", "intrinsics.json"):
        _require_file(os.path.join(path, name), name)
    frames, masks = load_frames(path)
    if not frames:
        raise InputError(f"{path}: trajectory lists no frames")
    return frames, masks


def cmd_fuse(cfg: dict, args) -> None:
    frames, _ = _read_frame_dir(args.frames_dir)
    fc = _fusion(cfg)
    vol = fuse_frames(frames, cfg["voxel_size"], fc, threads=args.threads)
    pts = extract_static_points(vol, fc)
    save_checkpoint(os.path.join(args.out, "volume.tsdf"), vol)
    wio.write_ply(os.path.join(args.out, "static.ply"), pts)
    wio.write_json(os.path.join(args.out, "manifest.json"), {
        "frames": len(frames),
        "frame_range": [frames[0].index, frames[-1].index],
        "dims": [int(d) for d in vol.dims],
        "voxel_size": vol.voxel_size,
        "truncation": vol.truncation,
        "points": len(pts),
    })
    _log(f"fuse: {len(frames)} frames -> {len(pts)} static points")


def cmd_render(cfg: dict, args) -> None:
    for p, what in ((args.ply, "point cloud"), (args.trajectory, "trajectory"), (args.intrinsics, "intrinsics")):
        _require_file(p, what)
    cloud = wio.read_ply(args.ply)
    items = wio.read_json(args.trajectory)
    poses = wio.load_trajectory(items)
    intr = wio.read_intrinsics(args.intrinsics)
    reveals = []
    for item, pose in zip(items, poses):
        i = item["index"]
        v = render_points(cloud, intr, pose, cfg["splat_radius"])
        wio.write_image(os.path.join(args.out, "condition", f"{i:04d}.ppm"), v.image)
        wio.write_mask(os.path.join(args.out, "mask", f"{i:04d}.ppm"), v.mask)
        wio.write_depth(os.path.join(args.out, "depth", f"{i:04d}.pfm"), v.depth)
        reveals.append({"index": i, "reveal_fraction": reveal_fraction(v)})
    wio.write_json(os.path.join(args.out, "manifest.json"), {"views": reveals, "points": len(cloud)})
    _log(f"render: {len(poses)} views")


def cmd_run(cfg: dict, args) -> None:
    scene = _scene(cfg)
    intr = CameraIntrinsics.from_fov(cfg["width"], cfg["height"], cfg["hfov"])
    if cfg["steps"] < 1:
        raise InputError("--steps must be at least 1")
    if cfg["chunk"] <= cfg["context"] or cfg["context"] < 1:
        raise InputError("--chunk must exceed --context, which must be at least 1")
    n = cfg["chunk"] + (cfg["steps"] - 1) * (cfg["chunk"] - cfg["context"])
    if cfg["trajectory"] == "forward-reverse" and n % 2:
        n += 1
    poses = _trajectory(cfg, scene, n)
    pcfg = PipelineConfig(
        scene=scene,
        trajectory=poses,
        intrinsics=intr,
        chunk=cfg["chunk"],
        context=cfg["context"],
        voxel_size=cfg["voxel_size"],
        fusion=_fusion(cfg),
        noise=_noise(cfg),
        alignment=cfg["alignment"],
        splat_radius=cfg["splat_radius"],
        theta=cfg["theta"],
        episodic_capacity=cfg["capacity"],
        spatial_memory=cfg["spatial_memory"],
        threads=args.threads,
    )
    result = run_autoregressive(pcfg, cfg["steps"])
    for rec in result.records:
        _log(f"step {rec.step}: frames {rec.frame_indices[0]}-{rec.frame_indices[-1]}, "
             f"memory {rec.spatial_before} -> {rec.spatial_after} points, "
             f"episodic +{len(rec.episodic_additions)}")
    write_run(result, pcfg, args.out, cfg["steps"], {"resolved": cfg})
    wio.write_json(os.path.join(args.out, "scene.json"), scene.to_dict())


def cmd_segment(cfg: dict, args) -> None:
    frames, _ = _read_frame_dir(args.frames_dir)
    clips = segment_clips(frames, cfg["clip_length"], cfg["source_length"])
    for k, clip in enumerate(clips):
        d = os.path.join(args.out, f"pair_{k:04d}")
        for part, items in (("source", clip.source), ("target", clip.target)):
            for j, f in enumerate(items):
                wio.write_image(os.path.join(d, part, f"{j:04d}.ppm"), f.image)
                wio.write_depth(os.path.join(d, part, f"{j:04d}.pfm"), f.depth)
        wio.write_json(os.path.join(d, "meta.json"), {
            "clip_start": clip.start,
            "source_frames": [f.index for f in clip.source],
            "target_frames": [f.index for f in clip.target],
            "transition_index": clip.transition,
            "source_poses": wio.dump_trajectory([f.pose for f in clip.source], 0),
            "target_poses": wio.dump_trajectory([f.pose for f in clip.target], 0),
        })
    wio.write_json(os.path.join(args.out, "manifest.json"), {
        "frames": len(frames),
        "pairs": [f"pair_{k:04d}" for k in range(len(clips))],
        "dropped": len(frames) - len(clips) * cfg["clip_length"],
    })
    _log(f"segment: {len(clips)} pair(s) from {len(frames)} frames")


def cmd_build_pairs(cfg: dict, args) -> None:
    frames, _ = _read_frame_dir(args.frames_dir)
    clips = segment_clips(frames)
    fc = _fusion(cfg)
    for k, clip in enumerate(clips):
        sample = build_pair(clip, cfg["voxel_size"], fc, cfg["splat_radius"], args.threads)
        write_pair(sample, os.path.join(args.out, f"pair_{k:04d}"))
        _log(f"build-pairs: pair {k} from frames {clip.start}-{clip.start + len(clip.source) + len(clip.target) - 1}")
    wio.write_json(os.path.join(args.out, "manifest.json"), {
        "frames": len(frames),
        "pairs": [f"pair_{k:04d}" for k in range(len(clips))],
    })


def cmd_eval_recall(cfg: dict, args) -> None:
    _require_dir(args.run_dir, "run directory")
    frames, masks = _read_frame_dir(args.run_dir)
    n = cfg["trajectory_length"]
    mpath = os.path.join(args.run_dir, "manifest.json")
    if n is None and os.path.exists(mpath):
        n = wio.read_json(mpath).get("trajectory_length")
    use_masks = masks if all(m is not None for m in masks) else None
    report = view_recall_eval(frames, use_masks, n)
    wio.write_json(args.out, report.to_dict())
    with open(os.path.splitext(args.out)[0] + ".csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    s = report.summary()
    _log(f"eval-recall: {s['pair_count']} pairs, mean PSNR {s['psnr']['mean']:.2f} dB")


def cmd_eval_suppression(cfg: dict, args) -> None:
    _require_dir(args.frames_dir, "frame directory")
    scene_path = os.path.join(args.frames_dir, "scene.json")
    _require_file(scene_path, "scene description")
    scene = build_scene(0, "custom", wio.read_json(scene_path))
    ply = args.ply or (os.path.join(args.fused_dir, "static.ply") if args.fused_dir else None)
    vol_path = args.volume or (os.path.join(args.fused_dir, "volume.tsdf") if args.fused_dir else None)
    if ply is None:
        raise InputError("eval-suppression needs --fused-dir or --ply")
    _require_file(ply, "point cloud")
    vol = None
    if vol_path is not None:
        _require_file(vol_path, "TSDF checkpoint")
        vol = load_checkpoint(vol_path)
    items = wio.read_json(os.path.join(args.frames_dir, "trajectory.json"))
    if not isinstance(items, list) or not items:
        raise InputError(f"{args.frames_dir}: trajectory lists no frames")
    idx = [it.get("index") if isinstance(it, dict) else None for it in items]
    if not all(isinstance(i, int) for i in idx):
        raise InputError(f"{args.frames_dir}/trajectory.json: every entry needs an integer index")
    m = suppression_metrics(wio.read_ply(ply), scene, (min(idx), max(idx)), vol, _fusion(cfg), cfg["inflate"])
    wio.write_json(args.out, m.to_dict())
    _log(f"eval-suppression: leak {m.dynamic_leak_rate:.4f}, recall {m.static_recall:.4f}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fuse": cmd_fuse,
    "render": cmd_render,
    "run": cmd_run,
    "segment": cmd_segment,
    "build-pairs": cmd_build_pairs,
    "eval-recall": cmd_eval_recall,
    "eval-suppression": cmd_eval_suppression,
}

# commands whose --out is a report file rather than a directory
_FILE_OUTPUT = ("eval-recall", "eval-suppression")


# -------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


_S = argparse.SUPPRESS


def _add_scene(p):
    p.add_argument("--preset", default=_S, help=f"scene preset: {', '.join(PRESETS)}")
    p.add_argument("--scene", default=_S, help="custom scene JSON (overrides --preset)")
    p.add_argument("--seed", type=int, default=_S)
    p.add_argument("--width", type=int, default=_S)
    p.add_argument("--height", type=int, default=_S)
    p.add_argument("--hfov", type=float, default=_S, help="horizontal field of view in degrees")
    p.add_argument("--trajectory", default=_S, choices=("orbit", "forward-reverse", "random-walk"))
    p.add_argument("--sweep-deg", type=float, default=_S)
    p.add_argument("--start-deg", type=float, default=_S)
    p.add_argument("--noise-rgb", type=float, default=_S, help="RGB noise sigma")
    p.add_argument("--noise-depth", type=float, default=_S, help="relative depth noise sigma")
    p.add_argument("--noise-rot", type=float, default=_S, help="pose rotation noise in degrees")
    p.add_argument("--noise-trans", type=float, default=_S, help="pose translation noise in metres")


def _add_fusion(p):
    p.add_argument("--voxel-size", type=float, default=_S)
    p.add_argument("--truncation", type=float, default=_S, help="TSDF truncation in metres")
    p.add_argument("--min-weight", type=float, default=_S)
    p.add_argument("--surface-band", type=float, default=_S)
    p.add_argument("--variance-cap", type=float, default=_S)
    p.add_argument("--no-variance-filter", dest="variance_filter", action="store_false", default=_S)
    p.add_argument("--max-grid-dim", type=int, default=_S)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="worldmem", description="Geometry-grounded memory for autoregressive world generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", default=None, help="JSON file of settings; flags take precedence")
        p.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
        return p

    p = add("simulate", "render oracle frames and ground-truth static masks")
    _add_scene(p)
    p.add_argument("--frames", type=int, default=_S)
    p.add_argument("--out", required=True)

    p = add("fuse", "fuse a frame directory into a TSDF checkpoint and static PLY")
    _add_fusion(p)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("render", "render condition views of a PLY along a trajectory")
    p.add_argument("--splat-radius", type=int, default=_S)
    p.add_argument("--ply", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)

    p = add("run", "run the memory-guided autoregressive pipeline")
    _add_scene(p)
    _add_fusion(p)
    p.add_argument("--steps", type=int, default=_S)
    p.add_argument("--chunk", type=int, default=_S)
    p.add_argument("--context", type=int, default=_S)
    p.add_argument("--theta", type=float, default=_S, help="episodic reveal threshold")
    p.add_argument("--capacity", type=int, default=_S, help="episodic slot capacity")
    p.add_argument("--splat-radius", type=int, default=_S)
    p.add_argument("--alignment", choices=("known-poses", "icp"), default=_S)
    p.add_argument("--no-spatial-memory", dest="spatial_memory", action="store_false", default=_S)
    p.add_argument("--out", required=True)

    p = add("segment", "split a frame directory into 97-frame source/target clips")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("build-pairs", "build condition/mask/target training pairs from a frame directory")
    _add_fusion(p)
    p.add_argument("--splat-radius", type=int, default=_S)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("eval-recall", "forward/reverse view-recall PSNR and SSIM")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--trajectory-length", type=int, default=_S)
    p.add_argument("--out", required=True, help="report JSON; a CSV is written alongside")

    p = add("eval-suppression", "dynamic leak rate and static recall against the scene")
    _add_fusion(p)
    p.add_argument("--frames-dir", required=True, help="simulate output holding scene.json")
    p.add_argument("--fused-dir", default=None, help="fuse output holding static.ply and volume.tsdf")
    p.add_argument("--ply", default=None)
    p.add_argument("--volume", default=None)
    p.add_argument("--inflate", type=float, default=_S)
    p.add_argument("--out", required=True)
    return parser


_NON_CONFIG = ("command", "config", "threads", "out", "frames_dir", "run_dir", "fused_dir", "ply",
               "volume", "intrinsics")


def main(argv=None) -> int:
    parser = build_parser()
    if argv is not None:
        argv = [os.fspath(a) if isinstance(a, os.PathLike) else str(a) for a in argv]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        if args.command == "render":
            flags.pop("trajectory", None)
        cfg = resolve_config(args.command, flags, args.config)
        if args.command in _FILE_OUTPUT:
            out_dir = os.path.dirname(os.path.abspath(args.out))
            os.makedirs(out_dir, exist_ok=True)
            cfg_path = os.path.splitext(args.out)[0] + ".config.json"
        else:
            os.makedirs(args.out, exist_ok=True)
            cfg_path = os.path.join(args.out, "config.json")
        COMMANDS[args.command](cfg, args)
        wio.write_json(cfg_path, cfg)
    except (ValueError, FileNotFoundError) as exc:
        # InputError, FormatError and library validation of user-supplied values
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: internal: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


if __name__ == "__main__":
    sys.exit(main())
