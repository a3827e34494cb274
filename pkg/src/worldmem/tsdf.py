"""Dense TSDF volume: weighted-average fusion of depth frames and extraction of
the static surface as a point cloud.

Signed distances are stored normalised by the truncation distance, so every
stored value lies in [-1, 1] and the extraction thresholds are scale-free.
Voxels that are only ever seen as transient surfaces (moving objects) get
pulled towards +1 by later free-space observations, and voxels whose
observations disagree are dropped by the variance cap.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from worldmem.core.geometry import backproject_depth, project_points, round_half_up, transform
from worldmem.core.io import FormatError
from worldmem.core.types import Frame, PointCloud

MAX_GRID_DIM = 1200
CHECKPOINT_MAGIC = b"TSDF"
CHECKPOINT_VERSION = 1
_CHUNK = 1 << 18


@dataclass(frozen=True)
class FusionConfig:
    """Fusion and extraction parameters.

    ``truncation`` of None means five voxels. ``surface_band`` and
    ``variance_cap`` are in normalised units (fractions of the truncation).
    """

    truncation: Optional[float] = None
    frame_weight: float = 1.0
    max_grid_dim: int = MAX_GRID_DIM
    min_weight: float = 3.0
    surface_band: float = 0.25
    variance_cap: float = 0.15
    variance_filter: bool = True

    def __post_init__(self):
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError(f"truncation must be positive, got {self.truncation}")
        for name in ("frame_weight", "min_weight", "surface_band", "variance_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.max_grid_dim) < 1:
            raise ValueError("max_grid_dim must be at least 1")

    def truncation_for(self, voxel_size: float) -> float:
        return 5.0 * voxel_size if self.truncation is None else float(self.truncation)


class TsdfVolume:
    """Voxel grid of normalised TSDF, weight, colour and variance accumulators.

    Arrays are shaped ``(nz, ny, nx)`` so the flat C-order index has x fastest,
    matching the checkpoint layout.
    """

    def __init__(self, origin, voxel_size: float, dims, truncation: float):
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        self.truncation = float(truncation)
        nx, ny, nz = self.dims
        shape = (nz, ny, nx)
        self.tsdf = np.ones(shape)
        self.weight = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.color = np.zeros(shape + (3,))
        self._centers = None

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def variance(self) -> np.ndarray:
        """Weighted variance of contributed sdf values; NaN where unobserved."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.weight > 0, self.m2 / self.weight, np.nan)

    def voxel_center(self, ix: int, iy: int, iz: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy, iz], dtype=np.float64) + 0.5) * self.voxel_size

    def centers_flat(self) -> np.ndarray:
        """World-frame centre of every voxel in flat (x-fastest) order."""
        if self._centers is None:
            nx, ny, nz = self.dims
            z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
            idx = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1).astype(np.float64)
            self._centers = self.origin + (idx + 0.5) * self.voxel_size
        return self._centers

    def index_of(self, point) -> Optional[tuple[int, int, int]]:
        i = np.floor((np.asarray(point, dtype=np.float64) - self.origin) / self.voxel_size).astype(int)
        if np.any(i < 0) or np.any(i >= np.array(self.dims)):
            return None
        return int(i[0]), int(i[1]), int(i[2])

    def copy(self) -> TsdfVolume:
        out = TsdfVolume(self.origin, self.voxel_size, self.dims, self.truncation)
        out.tsdf = self.tsdf.copy()
        out.weight = self.weight.copy()
        out.m2 = self.m2.copy()
        out.color = self.color.copy()
        return out


def _grid_dims(extent: np.ndarray, voxel_size: float) -> np.ndarray:
    # rounding guards against 6.0/0.004 evaluating to 1500.0000000000002
    return np.maximum(np.ceil(np.round(extent / voxel_size, 9)).astype(np.int64), 1)


def new_volume(bounds_min, bounds_max, voxel_size: float, cfg: FusionConfig = FusionConfig()) -> TsdfVolume:
    """Allocate a volume covering the bounds, coarsening the voxel if needed.

    If the largest axis would need more than ``cfg.max_grid_dim`` voxels the
    voxel size is scaled up to ``max_extent / max_grid_dim``.
    """
    lo = np.asarray(bounds_min, dtype=np.float64).reshape(3)
    hi = np.asarray(bounds_max, dtype=np.float64).reshape(3)
    extent = hi - lo
    if not np.all(np.isfinite(extent)) or np.any(extent <= 0):
        raise ValueError(f"volume bounds must have positive extent, got {extent.tolist()}")
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    dims, voxel_size = grid_dims_for(extent, voxel_size, cfg.max_grid_dim)
    trunc = cfg.truncation_for(voxel_size)
    if trunc < voxel_size:
        raise ValueError(f"truncation {trunc} is smaller than the voxel size {voxel_size}")
    return TsdfVolume(lo, voxel_size, dims, trunc)


def frames_bounds(frames: Iterable[Frame], margin: float = 0.0):
    """Axis-aligned bounds of all valid depth points of ``frames``, padded by ``margin``."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for f in frames:
        pts, _ = backproject_depth(f.depth.depths, f.intrinsics)
        if len(pts) == 0:
            continue
        w = transform(f.pose, pts)
        lo = np.minimum(lo, w.min(axis=0))
        hi = np.maximum(hi, w.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise ValueError("no valid depth in any frame; cannot size a volume")
    return lo - margin, hi + margin


def _sdf_lookup(centers: np.ndarray, frame: Frame, truncation: float):
    """Normalised sdf for a batch of world points.

    Returns ``(sdf, valid, pixel_row, pixel_col)``; entries with ``valid``
    False were skipped (off-image, invalid depth, or beyond -truncation).
    """
    intr = frame.intrinsics
    pc = transform(frame.pose, centers, "world-to-cam")
    u, v, z, ok = project_points(pc, intr)
    col = np.where(ok, round_half_up(u), 0)
    row = np.where(ok, round_half_up(v), 0)
    ok &= (col < intr.width) & (row < intr.height)
    col[~ok] = 0
    row[~ok] = 0
    depth = frame.depth.depths[row, col]
    with np.errstate(invalid="ignore"):
        ok &= np.isfinite(depth) & (depth > 0)
        sdf = (depth - z) / truncation
        ok &= sdf >= -1.0
    return np.minimum(sdf, 1.0), ok, row, col


def voxel_sdf(voxel_center, frame: Frame, truncation: float) -> Optional[float]:
    """Normalised truncated signed distance of one voxel centre to the frame's surface."""
    sdf, ok, _, _ = _sdf_lookup(np.asarray(voxel_center, dtype=np.float64).reshape(1, 3), frame, truncation)
    return float(sdf[0]) if ok[0] else None


def _check_frame(frame: Frame) -> None:
    intr = frame.intrinsics
    if frame.image.pixels.shape[:2] != intr.shape or frame.depth.depths.shape != intr.shape:
        raise ValueError(f"frame {frame.index}: image/depth size disagrees with intrinsics")


def _integrate_range(vol: TsdfVolume, frame: Frame, w: float, start: int, stop: int) -> None:
    centers = vol.centers_flat()[start:stop]
    d, ok, row, col = _sdf_lookup(centers, frame, vol.truncation)
    if not ok.any():
        return
    idx = np.nonzero(ok)[0] + start
    d = d[ok]
    tsdf = vol.tsdf.reshape(-1)
    weight = vol.weight.reshape(-1)
    m2 = vol.m2.reshape(-1)
    color = vol.color.reshape(-1, 3)

    W = weight[idx]
    D = tsdf[idx]
    W_new = W + w
    D_new = (W * D + w * d) / W_new
    # West's weighted online variance; (d - D) uses the old mean, (d - D_new) the new one
    m2[idx] = np.where(W > 0, m2[idx] + w * (d - D) * (d - D_new), 0.0)
    tsdf[idx] = D_new
    rgb = frame.image.pixels[row[ok], col[ok]]
    color[idx] = (W[:, None] * color[idx] + w * rgb) / W_new[:, None]
    weight[idx] = W_new


def integrate_frame(vol: TsdfVolume, frame: Frame, cfg: FusionConfig = FusionConfig(),
                    weight: Optional[float] = None, threads: int = 1) -> TsdfVolume:
    """Fuse one frame into ``vol`` in place and return it.

    Voxels are processed in fixed index ranges; each voxel's update depends only
    on itself, so the result is identical for any ``threads`` value.
    """
    _check_frame(frame)
    w = cfg.frame_weight if weight is None else float(weight)
    if not w > 0:
        raise ValueError(f"frame weight must be positive, got {w}")
    ranges = [(s, min(s + _CHUNK, vol.n_voxels)) for s in range(0, vol.n_voxels, _CHUNK)]
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda r: _integrate_range(vol, frame, w, *r), ranges))
    else:
        for r in ranges:
            _integrate_range(vol, frame, w, *r)
    return vol


def fuse_frames(frames, voxel_size: float, cfg: FusionConfig = FusionConfig(),
                bounds=None, threads: int = 1) -> TsdfVolume:
    """Size a volume around the frames' depth points and integrate all of them."""
    frames = list(frames)
    if bounds is None:
        bounds = frames_bounds(frames, margin=cfg.truncation_for(voxel_size) + voxel_size)
    vol = new_volume(bounds[0], bounds[1], voxel_size, cfg)
    for f in frames:
        integrate_frame(vol, f, cfg, threads=threads)
    return vol


def extract_mask(vol: TsdfVolume, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Boolean (nz, ny, nx) mask of voxels that qualify as static surface."""
    keep = (vol.weight >= cfg.min_weight) & (np.abs(vol.tsdf) <= cfg.surface_band)
    if cfg.variance_filter:
        with np.errstate(invalid="ignore", divide="ignore"):
            keep &= vol.m2 <= cfg.variance_cap * vol.weight
    return keep


def extract_static_points(vol: TsdfVolume, cfg: FusionConfig = FusionConfig()) -> PointCloud:
    """One point per qualifying voxel, ordered lexicographically by (x, y, z) index."""
    keep = extract_mask(vol, cfg)
    ix, iy, iz = np.nonzero(keep.transpose(2, 1, 0))
    if len(ix) == 0:
        return PointCloud()
    pos = vol.origin + (np.stack([ix, iy, iz], axis=1) + 0.5) * vol.voxel_size
    return PointCloud(
        pos,
        np.clip(vol.color[iz, iy, ix], 0.0, 1.0),
        vol.weight[iz, iy, ix],
    )


# ----------------------------------------------------------------- checkpoint

_HEADER = struct.Struct("<4sI3dd3Id")


def encode_checkpoint(vol: TsdfVolume) -> bytes:
    head = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *vol.origin, vol.voxel_size, *vol.dims, vol.truncation
    )
    parts = [head]
    for arr in (vol.tsdf, vol.weight, vol.m2, vol.color):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> TsdfVolume:
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("TSDF checkpoint: bad magic at byte 0 (expected 'TSDF')")
    if len(data) < _HEADER.size:
        raise FormatError(f"TSDF checkpoint: truncated header at byte {len(data)}")
    _, version, ox, oy, oz, vs, nx, ny, nz, trunc = _HEADER.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"TSDF checkpoint: unsupported version {version} at byte 4")
    if not (vs > 0 and trunc > 0) or min(nx, ny, nz) < 1:
        raise FormatError("TSDF checkpoint: invalid grid parameters in header")
    n = nx * ny * nz
    need = _HEADER.size + n * 6 * 4
    if len(data) != need:
        raise FormatError(
            f"TSDF checkpoint: expected {need} bytes for dims {(nx, ny, nz)}, got {len(data)} "
            f"(mismatch from byte {min(len(data), need)})"
        )
    vol = TsdfVolume((ox, oy, oz), vs, (nx, ny, nz), trunc)
    off = _HEADER.size
    for name, comps in (("tsdf", 1), ("weight", 1), ("m2", 1), ("color", 3)):
        arr = np.frombuffer(data, dtype="<f4", count=n * comps, offset=off).astype(np.float64)
        setattr(vol, name, arr.reshape(getattr(vol, name).shape))
        off += n * comps * 4
    return vol


def save_checkpoint(path, vol: TsdfVolume) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(vol))


def load_checkpoint(path) -> TsdfVolume:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def grid_dims_for(extent, voxel_size: float, max_grid_dim: int = MAX_GRID_DIM) -> tuple[tuple[int, int, int], float]:
    """Dims and effective voxel size ``new_volume`` would pick, without allocating."""
    extent = np.asarray(extent, dtype=np.float64)
    dims = _grid_dims(extent, voxel_size)
    if dims.max() > max_grid_dim:
        voxel_size = float(extent.max()) / max_grid_dim
        dims = np.minimum(_grid_dims(extent, voxel_size), max_grid_dim)
    return tuple(int(d) for d in dims), voxel_size
