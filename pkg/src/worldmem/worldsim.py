"""Synthetic RGB-D world used in place of a learned video generator.

Scenes are built from axis-aligned rectangles, boxes and spheres. Frames are
produced by exact ray casting, so depth is analytic and every pixel carries a
ground-truth static/dynamic label. A seeded noise model perturbs colour,
depth and pose to emulate generation and reconstruction error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from worldmem.core.geometry import pixel_rays, rotation_about_axis
from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Frame, Image

SKY_COLOR = (0.6, 0.8, 1.0)
_EPS = 1e-9

PRESETS = ("room-with-mover", "static-room", "corridor")


@dataclass(frozen=True)
class Material:
    """Solid colour, or a checkerboard when ``color2`` is set."""

    color: tuple
    color2: Optional[tuple] = None
    cell: float = 0.5

    def shade(self, uv: np.ndarray) -> np.ndarray:
        """Colours for in-surface coordinates ``uv`` of shape (N, 2)."""
        c1 = np.asarray(self.color, dtype=np.float64)
        out = np.broadcast_to(c1, (len(uv), 3)).copy()
        if self.color2 is not None and len(uv):
            parity = np.floor(uv / self.cell).astype(np.int64).sum(axis=1) & 1
            out[parity == 1] = np.asarray(self.color2, dtype=np.float64)
        return out

    def to_dict(self) -> dict:
        d = {"color": list(self.color)}
        if self.color2 is not None:
            d["color2"] = list(self.color2)
            d["cell"] = self.cell
        return d

    @classmethod
    def from_dict(cls, d) -> Material:
        c2 = d.get("color2")
        return cls(tuple(d["color"]), tuple(c2) if c2 is not None else None, float(d.get("cell", 0.5)))


@dataclass(frozen=True)
class Plane:
    """Axis-aligned rectangle at ``coord[axis] == offset``.

    ``lo`` and ``hi`` bound the two remaining axes, in increasing axis order.
    """

    axis: int
    offset: float
    lo: tuple
    hi: tuple
    material: Material

    def _others(self):
        return [a for a in range(3) if a != self.axis]

    def intersect(self, o: np.ndarray, d: np.ndarray):
        a = self.axis
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - o[a]) / d[:, a]
            p = o + t[:, None] * d
        b = self._others()
        ok = np.isfinite(t) & (t > _EPS)
        for k, ax in enumerate(b):
            ok &= (p[:, ax] >= self.lo[k]) & (p[:, ax] <= self.hi[k])
        return np.where(ok, t, np.inf)

    def shade(self, p: np.ndarray) -> np.ndarray:
        return self.material.shade(p[:, self._others()])

    def distance(self, p: np.ndarray) -> np.ndarray:
        q = p.copy()
        for k, ax in enumerate(self._others()):
            q[:, ax] = np.clip(q[:, ax], self.lo[k], self.hi[k])
        q[:, self.axis] = self.offset
        return np.linalg.norm(p - q, axis=1)

    def translated(self, delta) -> Plane:
        delta = np.asarray(delta, dtype=np.float64)
        b = self._others()
        return replace(
            self,
            offset=self.offset + delta[self.axis],
            lo=tuple(self.lo[k] + delta[ax] for k, ax in enumerate(b)),
            hi=tuple(self.hi[k] + delta[ax] for k, ax in enumerate(b)),
        )

    @property
    def anchor(self) -> np.ndarray:
        c = np.zeros(3)
        c[self.axis] = self.offset
        for k, ax in enumerate(self._others()):
            c[ax] = 0.5 * (self.lo[k] + self.hi[k])
        return c

    def to_dict(self) -> dict:
        return {"type": "plane", "axis": self.axis, "offset": self.offset,
                "lo": list(self.lo), "hi": list(self.hi), "material": self.material.to_dict()}


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    material: Material

    def intersect(self, o: np.ndarray, d: np.ndarray):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
        par = d == 0
        inside = (o >= lo) & (o <= hi)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tn = tmin.max(axis=1)
        tf = tmax.min(axis=1)
        hit = (tn <= tf) & (tf > _EPS)
        t = np.where(tn > _EPS, tn, tf)
        return np.where(hit, t, np.inf)

    def shade(self, p: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        gap = np.minimum(np.abs(p - lo), np.abs(p - hi))
        face = np.argmin(gap, axis=1)
        keep = np.array([[1, 2], [0, 2], [0, 1]])[face]
        uv = np.take_along_axis(p, keep, axis=1)
        return self.material.shade(uv)

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def distance(self, p: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_distance(p))

    def translated(self, delta) -> Box:
        delta = np.asarray(delta, dtype=np.float64)
        return replace(self, lo=tuple(np.asarray(self.lo) + delta), hi=tuple(np.asarray(self.hi) + delta))

    @property
    def anchor(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def to_dict(self) -> dict:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi), "material": self.material.to_dict()}


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    material: Material

    def intersect(self, o: np.ndarray, d: np.ndarray):
        oc = o - np.asarray(self.center)
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ oc)
        c = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c
        ok = disc >= 0
        s = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - s) / (2 * a)
        t1 = (-b + s) / (2 * a)
        t = np.where(t0 > _EPS, t0, t1)
        return np.where(ok & (t > _EPS), t, np.inf)

    def shade(self, p: np.ndarray) -> np.ndarray:
        return self.material.shade(p[:, :2])

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p - np.asarray(self.center), axis=1) - self.radius

    def distance(self, p: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_distance(p))

    def translated(self, delta) -> Sphere:
        return replace(self, center=tuple(np.asarray(self.center) + np.asarray(delta, dtype=np.float64)))

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius,
                "material": self.material.to_dict()}


Primitive = Union[Plane, Box, Sphere]


def primitive_from_dict(d) -> Primitive:
    kind = d.get("type")
    mat = Material.from_dict(d["material"])
    if kind == "plane":
        return Plane(int(d["axis"]), float(d["offset"]), tuple(d["lo"]), tuple(d["hi"]), mat)
    if kind == "box":
        return Box(tuple(d["lo"]), tuple(d["hi"]), mat)
    if kind == "sphere":
        return Sphere(tuple(d["center"]), float(d["radius"]), mat)
    raise ValueError(f"unknown primitive type {kind!r}")


@dataclass(frozen=True)
class Motion:
    """Displacement of a dynamic object as a function of frame index.

    ``sinusoid``: ``amplitude * sin(2*pi*t/period + phase)`` per axis.
    ``polynomial``: ``sum_k coeffs[k] * t**k`` with 3-vector coefficients.
    """

    kind: str = "sinusoid"
    amplitude: tuple = (0.0, 0.0, 0.0)
    period: float = 60.0
    phase: float = 0.0
    coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sinusoid", "polynomial"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.kind == "sinusoid" and not self.period > 0:
            raise ValueError("sinusoid period must be positive")

    def offset(self, t: float) -> np.ndarray:
        if self.kind == "sinusoid":
            return np.asarray(self.amplitude, dtype=np.float64) * np.sin(2 * np.pi * t / self.period + self.phase)
        out = np.zeros(3)
        for k, c in enumerate(self.coeffs):
            out += np.asarray(c, dtype=np.float64) * float(t) ** k
        return out

    def to_dict(self) -> dict:
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", "amplitude": list(self.amplitude), "period": self.period, "phase": self.phase}
        return {"kind": "polynomial", "coeffs": [list(c) for c in self.coeffs]}

    @classmethod
    def from_dict(cls, d) -> Motion:
        if d.get("kind", "sinusoid") == "polynomial":
            return cls("polynomial", coeffs=tuple(tuple(c) for c in d["coeffs"]))
        return cls("sinusoid", tuple(d["amplitude"]), float(d["period"]), float(d.get("phase", 0.0)))


@dataclass(frozen=True)
class DynamicObject:
    primitive: Primitive
    motion: Motion

    def at(self, t: float) -> Primitive:
        return self.primitive.translated(self.motion.offset(t))


@dataclass(frozen=True)
class SyntheticScene:
    static: tuple
    dynamic: tuple = ()
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    seed: int = 0

    def primitives_at(self, t: float) -> list[tuple[Primitive, bool]]:
        """All primitives posed at time ``t``, each tagged ``is_static``."""
        out = [(p, True) for p in self.static]
        out += [(d.at(t), False) for d in self.dynamic]
        return out

    def without_dynamics(self) -> SyntheticScene:
        return replace(self, dynamic=())

    def static_surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from each point to the nearest static surface."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not self.static:
            return np.full(len(p), np.inf)
        return np.min([prim.distance(p) for prim in self.static], axis=0)

    def in_dynamic_sweep(self, points: np.ndarray, t0: float, t1: float,
                         inflate: float = 0.0, samples_per_frame: int = 4) -> np.ndarray:
        """True for points inside any dynamic object at some time in [t0, t1], grown by ``inflate``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.zeros(len(p), dtype=bool)
        if not self.dynamic or len(p) == 0:
            return inside
        n = max(int(np.ceil((t1 - t0) * samples_per_frame)) + 1, 2)
        for obj in self.dynamic:
            for t in np.linspace(t0, t1, n):
                inside |= obj.at(t).signed_distance(p) <= inflate
        return inside

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.static],
            "dynamics": [{"primitive": d.primitive.to_dict(), "motion": d.motion.to_dict()} for d in self.dynamic],
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> SyntheticScene:
        unknown = set(d) - {"primitives", "dynamics", "bounds", "seed"}
        if unknown:
            raise ValueError(f"scene: unknown key(s) {sorted(unknown)}")
        try:
            static = tuple(primitive_from_dict(p) for p in d["primitives"])
            dyn = tuple(
                DynamicObject(primitive_from_dict(x["primitive"]), Motion.from_dict(x["motion"]))
                for x in d.get("dynamics", [])
            )
            lo, hi = d["bounds"]
            scene = cls(static, dyn, (tuple(lo), tuple(hi)), int(d.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"scene: malformed description ({exc})") from None
        return scene


# ------------------------------------------------------------------ presets


def _room_walls(rng, lo, hi, cell=0.5):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    walls = []
    base = [(0.55, 0.5, 0.45), (0.45, 0.52, 0.6), (0.6, 0.45, 0.42), (0.42, 0.58, 0.45), (0.58, 0.56, 0.4)]
    cols = [np.clip(np.asarray(c) + rng.uniform(-0.05, 0.05, 3), 0, 1) for c in base]

    def mat(c):
        c = tuple(float(x) for x in c)
        return Material(c, tuple(float(x) * 0.85 for x in c), cell)

    walls.append(Plane(2, z0, (x0, y0), (x1, y1), mat(cols[0])))
    walls.append(Plane(0, x0, (y0, z0), (y1, z1), mat(cols[1])))
    walls.append(Plane(0, x1, (y0, z0), (y1, z1), mat(cols[2])))
    walls.append(Plane(1, y0, (x0, z0), (x1, z1), mat(cols[3])))
    walls.append(Plane(1, y1, (x0, z0), (x1, z1), mat(cols[4])))
    return walls


def _room(seed: int, with_mover: bool) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    half, height = 2.0, 2.5
    static = _room_walls(rng, (-half, -half, 0.0), (half, half, height))
    corners = [(1.45, 1.45), (-1.45, 1.45), (1.45, -1.45), (-1.45, -1.45)]
    order = rng.permutation(4)[:3]
    box_cols = [(0.75, 0.3, 0.25), (0.25, 0.45, 0.75), (0.8, 0.7, 0.25)]
    for k, ci in enumerate(order):
        cx, cy = corners[ci]
        hx, hy = rng.uniform(0.2, 0.3, 2)
        hz = rng.uniform(0.3, 0.6)
        col = tuple(float(x) for x in np.clip(np.asarray(box_cols[k]) + rng.uniform(-0.05, 0.05, 3), 0, 1))
        static.append(Box((cx - hx, cy - hy, 0.0), (cx + hx, cy + hy, hz), Material(col)))
    dynamic = ()
    if with_mover:
        theta = rng.uniform(0, np.pi)
        amp = 0.9
        mover = Sphere((0.0, 0.0, 1.2), 0.25, Material((0.9, 0.15, 0.6)))
        motion = Motion(
            "sinusoid",
            (amp * np.cos(theta), amp * np.sin(theta), 0.15),
            period=float(rng.uniform(110.0, 130.0)),
            phase=float(rng.uniform(0, 2 * np.pi)),
        )
        dynamic = (DynamicObject(mover, motion),)
    bounds = ((-half, -half, 0.0), (half, half, height))
    return SyntheticScene(tuple(static), dynamic, bounds, seed)


def _corridor(seed: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    lo, hi = (-4.0, -1.0, 0.0), (4.0, 1.0, 2.5)
    static = _room_walls(rng, lo, hi)
    for k in range(4):
        cx = -3.0 + 2.0 * k + rng.uniform(-0.3, 0.3)
        side = 1 if k % 2 == 0 else -1
        cy = side * 0.75
        h = rng.uniform(0.3, 0.8)
        col = tuple(float(x) for x in rng.uniform(0.2, 0.8, 3))
        static.append(Box((cx - 0.2, cy - 0.2, 0.0), (cx + 0.2, cy + 0.2, h), Material(col)))
    return SyntheticScene(tuple(static), (), (lo, hi), seed)


def build_scene(seed: int = 0, preset: str = "room-with-mover", config: Optional[dict] = None) -> SyntheticScene:
    """Deterministic scene for ``(seed, preset)``; ``preset="custom"`` reads ``config``."""
    if preset == "room-with-mover":
        return _room(seed, with_mover=True)
    if preset == "static-room":
        return _room(seed, with_mover=False)
    if preset == "corridor":
        return _corridor(seed)
    if preset == "custom":
        if config is None:
            raise ValueError("custom preset needs a scene description")
        return SyntheticScene.from_dict(config)
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS + ('custom',)}")


def default_trajectory_params(scene: SyntheticScene) -> dict:
    """Orbit parameters that keep the camera inside the scene looking at its middle."""
    lo = np.asarray(scene.bounds[0])
    hi = np.asarray(scene.bounds[1])
    c = 0.5 * (lo + hi)
    r = 0.4 * float(min(hi[0] - lo[0], hi[1] - lo[1]))
    return {
        "radius": r,
        "height": float(lo[2] + 0.64 * (hi[2] - lo[2])),
        "target": [float(c[0]), float(c[1]), float(lo[2] + 0.36 * (hi[2] - lo[2]))],
    }


# ---------------------------------------------------------------- rendering


def cast_rays(scene: SyntheticScene, origin, dirs: np.ndarray, t: float):
    """Nearest hit along each ray ``origin + s * dirs``.

    Returns ``(s, rgb, is_static)``; ``s`` is inf on a miss.
    """
    o = np.asarray(origin, dtype=np.float64)
    n = len(dirs)
    best = np.full(n, np.inf)
    which = np.full(n, -1)
    prims = scene.primitives_at(t)
    for k, (prim, _) in enumerate(prims):
        s = prim.intersect(o, dirs)
        closer = s < best
        best[closer] = s[closer]
        which[closer] = k
    rgb = np.broadcast_to(np.asarray(SKY_COLOR), (n, 3)).copy()
    static = np.ones(n, dtype=bool)
    pts = o + np.where(np.isfinite(best), best, 0.0)[:, None] * dirs
    for k, (prim, is_static) in enumerate(prims):
        sel = which == k
        if sel.any():
            rgb[sel] = prim.shade(pts[sel])
            static[sel] = is_static
    return best, np.clip(rgb, 0.0, 1.0), static


def render_frame(scene: SyntheticScene, pose: CameraPose, intr: CameraIntrinsics, t: int):
    """Ray-cast one RGB-D frame at time ``t``; returns ``(frame, static_mask)``."""
    rays = pixel_rays(intr).reshape(-1, 3)
    dirs = rays @ pose.rotation.T
    # rays have unit camera z, so the ray parameter at a hit is the z-depth
    s, rgb, static = cast_rays(scene, pose.translation, dirs, t)
    h, w = intr.shape
    depth = np.where(np.isfinite(s), s, 0.0).reshape(h, w)
    frame = Frame(int(t), Image(rgb.reshape(h, w, 3)), DepthMap(depth), pose, intr)
    return frame, static.reshape(h, w)


# ------------------------------------------------------------- trajectories


def _orbit_pose(target, radius, height, angle):
    target = np.asarray(target, dtype=np.float64)
    eye = np.array([target[0] + radius * np.cos(angle), target[1] + radius * np.sin(angle), height])
    return CameraPose.look_at(eye, target)


def make_trajectory(kind: str, n_frames: int, **params) -> list[CameraPose]:
    """Camera path generator.

    ``orbit``: ``radius``, ``height``, ``target``, ``start_deg``, ``sweep_deg``
    (default 360, spaced ``sweep/n`` apart). ``forward-reverse``: an orbit arc
    over the first half, then the same poses in reverse so that pose ``i`` and
    pose ``n-1-i`` are identical. ``random-walk``: ``seed``, ``step``,
    ``bounds_min``/``bounds_max`` and ``target``.
    """
    if n_frames < 2:
        raise ValueError(f"trajectory needs at least 2 frames, got {n_frames}")
    radius = float(params.get("radius", 1.6))
    height = float(params.get("height", 1.6))
    target = params.get("target", (0.0, 0.0, 0.9))
    if kind == "orbit":
        if radius <= 0:
            raise ValueError("orbit radius must be positive")
        start = np.radians(params.get("start_deg", 0.0))
        sweep = np.radians(params.get("sweep_deg", 360.0))
        return [_orbit_pose(target, radius, height, start + sweep * i / n_frames) for i in range(n_frames)]
    if kind == "forward-reverse":
        if n_frames % 2:
            raise ValueError(f"forward-reverse needs an even frame count, got {n_frames}")
        if radius <= 0:
            raise ValueError("orbit radius must be positive")
        m = n_frames // 2
        start = np.radians(params.get("start_deg", 0.0))
        sweep = np.radians(params.get("sweep_deg", 90.0))
        fwd = [_orbit_pose(target, radius, height, start + sweep * i / max(m - 1, 1)) for i in range(m)]
        return fwd + fwd[::-1]
    if kind == "random-walk":
        rng = np.random.default_rng(int(params.get("seed", 0)))
        lo = np.asarray(params.get("bounds_min", (-1.0, -1.0, 1.2)), dtype=np.float64)
        hi = np.asarray(params.get("bounds_max", (1.0, 1.0, 1.8)), dtype=np.float64)
        if np.any(hi <= lo):
            raise ValueError("random-walk bounds must have positive extent")
        step = float(params.get("step", 0.05))
        pos = 0.5 * (lo + hi)
        yaw = float(rng.uniform(0, 2 * np.pi))
        out = []
        for _ in range(n_frames):
            fwd = np.array([np.cos(yaw), np.sin(yaw), -0.25])
            out.append(CameraPose.look_at(pos, pos + fwd))
            pos = pos + rng.normal(0.0, step, 3)
            # reflect back into the box
            pos = np.where(pos < lo, 2 * lo - pos, pos)
            pos = np.where(pos > hi, 2 * hi - pos, pos)
            pos = np.clip(pos, lo, hi)
            yaw += float(rng.normal(0.0, np.radians(5.0)))
        return out
    raise ValueError(f"unknown trajectory kind {kind!r}")


# -------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseModel:
    rgb_sigma: float = 0.0
    depth_sigma_rel: float = 0.0
    rot_deg: float = 0.0
    trans_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("rgb_sigma", "depth_sigma_rel", "rot_deg", "trans_m"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"noise {name} must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.rgb_sigma == 0 and self.depth_sigma_rel == 0 and self.rot_deg == 0 and self.trans_m == 0


def perturb_frame(frame: Frame, noise: NoiseModel, t: Optional[int] = None) -> Frame:
    """Seeded noisy copy of ``frame``; the stream depends only on ``(noise.seed, t)``."""
    if noise.is_zero:
        return frame
    t = frame.index if t is None else t
    rng = np.random.default_rng([int(noise.seed) & 0xFFFFFFFF, int(t) & 0xFFFFFFFF])
    image, depth, pose = frame.image, frame.depth, frame.pose
    if noise.rgb_sigma > 0:
        px = image.pixels + rng.normal(0.0, noise.rgb_sigma, image.pixels.shape)
        image = Image(np.clip(px, 0.0, 1.0))
    if noise.depth_sigma_rel > 0:
        d = depth.depths
        valid = depth.valid
        scale = 1.0 + rng.normal(0.0, noise.depth_sigma_rel, d.shape)
        nd = np.where(valid, d * scale, d)
        # keep noisy depths valid
        nd = np.where(valid, np.maximum(nd, 1e-3), nd)
        depth = DepthMap(nd)
    if noise.rot_deg > 0 or noise.trans_m > 0:
        R, tr = pose.rotation, pose.translation
        if noise.rot_deg > 0:
            w = rng.normal(0.0, np.radians(noise.rot_deg), 3)
            ang = np.linalg.norm(w)
            if ang > 0:
                R = rotation_about_axis(w, ang) @ R
        if noise.trans_m > 0:
            tr = tr + rng.normal(0.0, noise.trans_m, 3)
        pose = CameraPose(R, tr)
    return Frame(frame.index, image, depth, pose, frame.intrinsics)


def simulate(scene: SyntheticScene, poses: Sequence[CameraPose], intr: CameraIntrinsics,
             noise: NoiseModel = NoiseModel(), start_index: int = 0, threads: int = 1):
    """Render and perturb a sequence; returns ``(frames, static_masks)``."""
    def one(i):
        f, m = render_frame(scene, poses[i], intr, start_index + i)
        return perturb_frame(f, noise, start_index + i), m

    idx = range(len(poses))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, idx))
    else:
        out = [one(i) for i in idx]
    return [f for f, _ in out], [m for _, m in out]
