"""Memory-guided autoregressive generation loop and paired-sample construction.

The generator is the ray-cast oracle from :mod:`worldmem.worldsim` plus its
noise model. Memory conditioning is gated by consistency: where the condition
render covers a static surface at the right depth and its colour lies within
three noise deviations of the generator's own prediction, the generated frame
reproduces the memory's colour. Everywhere else it keeps the oracle's noisy
content, so with zero noise the conditioning changes nothing.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from worldmem.core import io as wio
from worldmem.core.types import CameraIntrinsics, CameraPose, Frame, Image, PointCloud
from worldmem.memory import EpisodicMemory, SpatialMemory, WorkingMemory, align_chunk
from worldmem.render import RenderedView, render_points, reveal_fraction
from worldmem.tsdf import FusionConfig, extract_static_points, fuse_frames, frames_bounds
from worldmem.worldsim import NoiseModel, SyntheticScene, perturb_frame, render_frame

CLIP_LENGTH = 97
SOURCE_LENGTH = 49


@dataclass
class PipelineConfig:
    scene: SyntheticScene
    trajectory: list
    intrinsics: CameraIntrinsics
    chunk: int = 49
    context: int = 5
    voxel_size: float = 0.04
    fusion: FusionConfig = field(default_factory=FusionConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    alignment: str = "known-poses"
    splat_radius: int = 1
    theta: float = 0.3
    episodic_capacity: Optional[int] = 64
    spatial_memory: bool = True
    threads: int = 1

    def __post_init__(self):
        if not self.context >= 1:
            raise ValueError("context must be at least 1")
        if not self.chunk > self.context:
            raise ValueError(f"chunk length {self.chunk} must exceed context {self.context}")
        if len(self.trajectory) < self.chunk:
            raise ValueError(f"trajectory has {len(self.trajectory)} poses, fewer than one chunk ({self.chunk})")
        if self.alignment not in ("known-poses", "icp"):
            raise ValueError(f"unknown alignment mode {self.alignment!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def step_advance(self) -> int:
        return self.chunk - self.context

    def frames_for(self, n_steps: int) -> int:
        return self.chunk + (n_steps - 1) * self.step_advance if n_steps > 0 else 0

    def chunk_indices(self, step: int) -> range:
        if step == 0:
            return range(0, self.chunk)
        start = self.chunk + (step - 1) * self.step_advance
        return range(start, start + self.step_advance)


@dataclass
class StepRecord:
    step: int
    frame_indices: list
    frames: list
    condition_views: list
    reveal_fractions: list
    episodic_additions: list
    spatial_before: int
    spatial_after: int
    extracted_points: int = 0
    alignment_rms: float = 0.0

    def summary(self) -> dict:
        return {
            "step": self.step,
            "frame_indices": list(self.frame_indices),
            "reveal_fractions": [float(r) for r in self.reveal_fractions],
            "episodic_additions": list(self.episodic_additions),
            "spatial_before": self.spatial_before,
            "spatial_after": self.spatial_after,
            "extracted_points": self.extracted_points,
            "alignment_rms": float(self.alignment_rms),
        }


@dataclass
class RunResult:
    records: list
    spatial: SpatialMemory
    episodic: EpisodicMemory
    working: WorkingMemory
    frames: list
    static_masks: list


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def guided_frame(scene: SyntheticScene, pose: CameraPose, intr: CameraIntrinsics, t: int,
                 noise: NoiseModel, view: Optional[RenderedView], depth_tol: float,
                 color_sigmas: float = 3.0):
    """Oracle "generation" of frame ``t`` under an optional memory condition.

    Returns ``(frame, static_mask, reconstructed_frame)``. The generated frame
    carries the commanded pose; the reconstructed frame carries the noisy pose
    estimate used for fusion.
    """
    truth, static = render_frame(scene, pose, intr, t)
    noisy = perturb_frame(truth, noise, t)
    pixels = noisy.image.pixels
    if view is not None and view.mask.any():
        gt = truth.depth.depths
        with np.errstate(invalid="ignore"):
            agree = np.abs(view.depth.depths - gt) <= depth_tol
        close = np.all(np.abs(view.image.pixels - pixels) <= color_sigmas * noise.rgb_sigma, axis=2)
        use = view.mask & static & truth.depth.valid & agree & close
        pixels = np.where(use[:, :, None], view.image.pixels, pixels)
    image = Image(pixels)
    frame = Frame(t, image, noisy.depth, pose, intr)
    recon = Frame(t, image, noisy.depth, noisy.pose, intr)
    return frame, static, recon


def run_autoregressive(cfg: PipelineConfig, n_steps: int) -> RunResult:
    """Run ``n_steps`` generation steps, updating all three memories as it goes."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    need = cfg.frames_for(n_steps)
    if need > len(cfg.trajectory):
        raise ValueError(f"{n_steps} steps need {need} poses, trajectory has {len(cfg.trajectory)}")

    intr = cfg.intrinsics
    trunc = cfg.fusion.truncation_for(cfg.voxel_size)
    spatial = SpatialMemory(cfg.voxel_size)
    episodic = EpisodicMemory(cfg.theta, cfg.episodic_capacity)
    working = WorkingMemory(cfg.context)
    records, all_frames, all_masks = [], [], []

    for step in range(n_steps):
        idx = list(cfg.chunk_indices(step))
        if working.last_index is not None and idx[0] != working.last_index + 1:
            raise ValueError(f"step {step}: chunk starts at {idx[0]}, working memory ends at {working.last_index}")
        poses = [cfg.trajectory[i] for i in idx]

        cloud = spatial.cloud if cfg.spatial_memory else PointCloud()
        try:
            views = _map(lambda p: render_points(cloud, intr, p, cfg.splat_radius), poses, cfg.threads)
            out = _map(
                lambda k: guided_frame(cfg.scene, poses[k], intr, idx[k], cfg.noise, views[k], trunc),
                list(range(len(idx))),
                cfg.threads,
            )
        except ValueError as exc:
            raise ValueError(f"step {step}: generation failed: {exc}") from exc
        frames = [o[0] for o in out]
        masks = [o[1] for o in out]
        recon = [o[2] for o in out]

        before = len(spatial)
        n_extracted = 0
        rms = 0.0
        try:
            lo, hi = frames_bounds(recon, margin=trunc + cfg.voxel_size)
            # snap to the global lattice so every step's voxel centres coincide with memory cells
            bounds = (np.floor(lo / cfg.voxel_size) * cfg.voxel_size, np.ceil(hi / cfg.voxel_size) * cfg.voxel_size)
        except ValueError:
            bounds = None
        if bounds is not None:
            try:
                vol = fuse_frames(recon, cfg.voxel_size, cfg.fusion, bounds=bounds, threads=cfg.threads)
                pts = extract_static_points(vol, cfg.fusion)
                n_extracted = len(pts)
                if len(pts):
                    if cfg.alignment == "icp" and len(spatial):
                        al = align_chunk(pts, spatial, "icp")
                    else:
                        al = align_chunk(pts, spatial, "known-poses")
                    rms = al.rms
                    spatial.merge(pts, al.transform)
            except ValueError as exc:
                raise ValueError(f"step {step}: fusion failed: {exc}") from exc

        reveals = [reveal_fraction(v) for v in views]
        added = []
        for f, r in zip(frames, reveals):
            if episodic.consider(f, r):
                added.append(f.index)
        for f in frames:
            working.push(f)

        records.append(StepRecord(step, idx, frames, views, reveals, added, before, len(spatial), n_extracted, rms))
        all_frames.extend(frames)
        all_masks.extend(masks)

    return RunResult(records, spatial, episodic, working, all_frames, all_masks)


# ----------------------------------------------------------- run artefacts


def config_echo(cfg: PipelineConfig, n_steps: int, extra: Optional[dict] = None) -> dict:
    d = {
        "chunk": cfg.chunk,
        "context": cfg.context,
        "voxel_size": cfg.voxel_size,
        "fusion": asdict(cfg.fusion),
        "noise": asdict(cfg.noise),
        "alignment": cfg.alignment,
        "splat_radius": cfg.splat_radius,
        "theta": cfg.theta,
        "episodic_capacity": cfg.episodic_capacity,
        "spatial_memory": cfg.spatial_memory,
        "steps": n_steps,
        "intrinsics": cfg.intrinsics.to_dict(),
        "scene": cfg.scene.to_dict(),
    }
    if extra:
        d.update(extra)
    return d


def write_run(result: RunResult, cfg: PipelineConfig, out_dir: str, n_steps: int,
              extra_config: Optional[dict] = None) -> dict:
    """Write frames, masks, memories and ``manifest.json``; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rel = lambda *p: os.path.join(*p)
    steps = []
    for rec in result.records:
        s = rec.summary()
        s["frames"] = [rel("frames", f"{i:04d}.ppm") for i in rec.frame_indices]
        s["condition"] = [rel("condition", f"{i:04d}.ppm") for i in rec.frame_indices]
        steps.append(s)
        for f, v in zip(rec.frames, rec.condition_views):
            i = f.index
            wio.write_image(os.path.join(out_dir, "frames", f"{i:04d}.ppm"), f.image)
            wio.write_depth(os.path.join(out_dir, "depth", f"{i:04d}.pfm"), f.depth)
            wio.write_image(os.path.join(out_dir, "condition", f"{i:04d}.ppm"), v.image)
            wio.write_mask(os.path.join(out_dir, "condition_mask", f"{i:04d}.ppm"), v.mask)
    for f, m in zip(result.frames, result.static_masks):
        wio.write_mask(os.path.join(out_dir, "static", f"{f.index:04d}.ppm"), m)

    wio.write_trajectory(os.path.join(out_dir, "trajectory.json"), [f.pose for f in result.frames])
    wio.write_json(
        os.path.join(out_dir, "trajectory_full.json"),
        wio.dump_trajectory(cfg.trajectory),
    )
    wio.write_intrinsics(os.path.join(out_dir, "intrinsics.json"), cfg.intrinsics)
    wio.write_ply(os.path.join(out_dir, "spatial_memory.ply"), result.spatial.cloud)
    episodic = write_episodic(result.episodic, os.path.join(out_dir, "episodic"))

    manifest = {
        "config": config_echo(cfg, n_steps, extra_config),
        "steps": steps,
        "trajectory_length": len(cfg.trajectory),
        "frame_count": len(result.frames),
        "outputs": {
            "frames": "frames",
            "depth": "depth",
            "static_masks": "static",
            "condition": "condition",
            "condition_mask": "condition_mask",
            "trajectory": "trajectory.json",
            "trajectory_full": "trajectory_full.json",
            "intrinsics": "intrinsics.json",
            "spatial_memory": "spatial_memory.ply",
            "episodic": "episodic/manifest.json",
        },
        "spatial_memory_points": len(result.spatial),
        "episodic_slots": len(episodic),
        "working_window": [f.index for f in result.working.window()],
    }
    wio.write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def write_episodic(mem: EpisodicMemory, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for s in mem.slots:
        name = f"{s.step_index:04d}.ppm"
        wio.write_image(os.path.join(out_dir, name), s.frame.image)
        entries.append({
            "step_index": s.step_index,
            "reveal_score": s.reveal_score,
            "pose": wio.pose_to_dict(s.frame.pose, s.frame.index),
            "image": name,
        })
    wio.write_json(os.path.join(out_dir, "manifest.json"), entries)
    return entries


def load_frames(run_dir: str, trajectory_file: str = "trajectory.json"):
    """Read back generated frames and static masks written by :func:`write_run` or ``simulate``."""
    poses = wio.read_trajectory(os.path.join(run_dir, trajectory_file))
    items = wio.read_json(os.path.join(run_dir, trajectory_file))
    intr = wio.read_intrinsics(os.path.join(run_dir, "intrinsics.json"))
    frames, masks = [], []
    for item, pose in zip(items, poses):
        i = item["index"]
        img = wio.read_image(os.path.join(run_dir, "frames", f"{i:04d}.ppm"))
        depth = wio.read_depth(os.path.join(run_dir, "depth", f"{i:04d}.pfm"))
        frames.append(Frame(i, img, depth, pose, intr))
        mpath = os.path.join(run_dir, "static", f"{i:04d}.ppm")
        masks.append(wio.read_mask(mpath) if os.path.exists(mpath) else None)
    return frames, masks


# ------------------------------------------------------------ paired clips


@dataclass
class Clip:
    start: int
    source: list
    target: list
    transition: int = SOURCE_LENGTH - 1


def segment_clips(frames: Sequence, clip_length: int = CLIP_LENGTH, source_length: int = SOURCE_LENGTH) -> list:
    """Non-overlapping clips; the first ``source_length`` frames of each are the source.

    ``transition`` is the local index of the last source frame, which a
    consumer may prepend to the target. Any trailing remainder is dropped.
    """
    clips = []
    for start in range(0, len(frames) - clip_length + 1, clip_length):
        window = list(frames[start : start + clip_length])
        clips.append(Clip(start, window[:source_length], window[source_length:], source_length - 1))
    return clips


@dataclass
class PairedSample:
    conditions: list
    targets: list
    points: PointCloud
    transition: int
    start: int = 0


def build_pair(clip: Clip, voxel_size: float = 0.04, cfg: FusionConfig = FusionConfig(),
               splat_radius: int = 1, threads: int = 1) -> PairedSample:
    """Fuse the source frames, then render the static reconstruction along the target poses."""
    vol = fuse_frames(clip.source, voxel_size, cfg, threads=threads)
    pts = extract_static_points(vol, cfg)
    views = _map(lambda f: render_points(pts, f.intrinsics, f.pose, splat_radius), clip.target, threads)
    return PairedSample(views, list(clip.target), pts, clip.transition, clip.start)


def write_pair(sample: PairedSample, out_dir: str) -> None:
    for k, (v, f) in enumerate(zip(sample.conditions, sample.targets)):
        wio.write_image(os.path.join(out_dir, "condition", f"{k:04d}.ppm"), v.image)
        wio.write_mask(os.path.join(out_dir, "mask", f"{k:04d}.ppm"), v.mask)
        wio.write_image(os.path.join(out_dir, "target", f"{k:04d}.ppm"), f.image)
    wio.write_json(os.path.join(out_dir, "meta.json"), {
        "clip_start": sample.start,
        "source_length": SOURCE_LENGTH,
        "target_length": len(sample.targets),
        "transition_index": sample.transition,
        "static_points": len(sample.points),
        "target_frames": [f.index for f in sample.targets],
        "target_poses": wio.dump_trajectory([f.pose for f in sample.targets], 0),
    })
