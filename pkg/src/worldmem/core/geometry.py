"""Pinhole projection and rigid transforms.

Pixel centres sit at integer coordinates; ``u`` grows to the right and ``v``
downwards. Scalar helpers mirror the batched ``*_points`` variants, which are
what the fusion and rendering code actually calls.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from worldmem.core.types import CameraIntrinsics, CameraPose

MIN_DEPTH = 1e-6

CAM_TO_WORLD = "cam-to-world"
WORLD_TO_CAM = "world-to-cam"


def project(point_cam, intr: CameraIntrinsics) -> Optional[tuple[float, float, float]]:
    """Project a camera-frame point; ``None`` if behind the camera or off-image."""
    x, y, z = (float(c) for c in point_cam)
    if not z > MIN_DEPTH:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return u, v, z


def backproject(u: float, v: float, z: float, intr: CameraIntrinsics) -> np.ndarray:
    if not z > 0:
        raise ValueError(f"backproject needs positive depth, got {z}")
    return np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])


def transform(pose: CameraPose, point, direction: str = CAM_TO_WORLD) -> np.ndarray:
    """Apply ``pose`` to a single point or an (N, 3) array of points."""
    p = np.asarray(point, dtype=np.float64)
    R, t = pose.rotation, pose.translation
    if direction == CAM_TO_WORLD:
        return p @ R.T + t
    if direction == WORLD_TO_CAM:
        return (p - t) @ R
    raise ValueError(f"unknown transform direction {direction!r}")


def project_points(points_cam: np.ndarray, intr: CameraIntrinsics):
    """Batched :func:`project`.

    Returns ``(u, v, z, valid)``; entries where ``valid`` is False hold
    undefined values.
    """
    p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    front = z > MIN_DEPTH
    safe_z = np.where(front, z, 1.0)
    u = intr.fx * p[:, 0] / safe_z + intr.cx
    v = intr.fy * p[:, 1] / safe_z + intr.cy
    valid = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return u, v, z, valid


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray per pixel with unit z, shaped (H, W, 3).

    Scaling a ray by a depth value gives the backprojected point directly.
    """
    v, u = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    return np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1
    )


def backproject_depth(depth, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame points (N, 3) for the valid depth pixels, plus the (H, W) validity mask.

    ``depth`` may be a :class:`DepthMap` or a plain array.
    """
    d = np.asarray(getattr(depth, "depths", depth), dtype=np.float64)
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(d) & (d > 0)
    rays = pixel_rays(intr)
    return rays[valid] * d[valid][:, None], valid


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * (K @ K)


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
