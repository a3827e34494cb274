"""Z-buffered square-splat rendering of point clouds.

Used to turn the spatial memory into condition images along a camera path
(black wherever no point lands) and to measure how much of a view the memory
leaves uncovered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from worldmem.core.geometry import project_points, round_half_up, transform
from worldmem.core.types import CameraIntrinsics, CameraPose, DepthMap, Image, PointCloud

DEPTH_TIE = 1e-9


@dataclass(frozen=True, eq=False)
class RenderedView:
    """Splat rendering; ``source`` holds the winning point index per pixel (-1 if uncovered)."""

    image: Image
    depth: DepthMap
    mask: np.ndarray
    source: np.ndarray = None

    def __post_init__(self):
        if self.source is None:
            object.__setattr__(self, "source", np.where(self.mask, 0, -1))

    @classmethod
    def empty(cls, intr: CameraIntrinsics) -> RenderedView:
        h, w = intr.shape
        return cls(Image.black(w, h), DepthMap.invalid(w, h), np.zeros((h, w), dtype=bool),
                   np.full((h, w), -1, dtype=np.int64))


def render_points(cloud: PointCloud, intr: CameraIntrinsics, pose: CameraPose,
                  splat_radius: int = 1) -> RenderedView:
    """Splat every point as a ``(2r+1)``-pixel square around its rounded projection.

    The nearest point wins each pixel; depths within ``DEPTH_TIE`` of the
    nearest count as ties and go to the lowest point index.
    """
    r = int(splat_radius)
    if r < 0 or r != splat_radius:
        raise ValueError(f"splat radius must be a nonnegative integer, got {splat_radius}")
    h, w = intr.shape
    if len(cloud) == 0:
        return RenderedView.empty(intr)

    pc = transform(pose, cloud.positions, "world-to-cam")
    u, v, z, ok = project_points(pc, intr)
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return RenderedView.empty(intr)
    cu = round_half_up(u[idx])
    cv = round_half_up(v[idx])
    z = z[idx]

    offs = np.arange(-r, r + 1)
    du, dv = np.meshgrid(offs, offs)
    pu = (cu[:, None] + du.ravel()[None, :]).ravel()
    pv = (cv[:, None] + dv.ravel()[None, :]).ravel()
    src = np.repeat(idx, du.size)
    pz = np.repeat(z, du.size)
    inside = (pu >= 0) & (pu < w) & (pv >= 0) & (pv < h)
    pix = (pv * w + pu)[inside]
    src = src[inside]
    pz = pz[inside]

    zmin = np.full(h * w, np.inf)
    np.minimum.at(zmin, pix, pz)
    cand = pz <= zmin[pix] + DEPTH_TIE
    winner = np.full(h * w, np.iinfo(np.int64).max)
    np.minimum.at(winner, pix[cand], src[cand])

    mask = winner != np.iinfo(np.int64).max
    sel = winner[mask]
    rgb = np.zeros((h * w, 3))
    rgb[mask] = np.clip(cloud.colors[sel], 0.0, 1.0)
    depth = np.zeros(h * w)
    depth[mask] = pc[sel, 2]
    source = np.where(mask, winner, -1).reshape(h, w)
    return RenderedView(Image(rgb.reshape(h, w, 3)), DepthMap(depth.reshape(h, w)), mask.reshape(h, w), source)


def render_trajectory(cloud: PointCloud, intr: CameraIntrinsics, poses, splat_radius: int = 1):
    return [render_points(cloud, intr, p, splat_radius) for p in poses]


def reveal_fraction(view: RenderedView) -> float:
    """Share of pixels the rendering leaves uncovered."""
    return float(np.count_nonzero(~view.mask)) / view.mask.size
