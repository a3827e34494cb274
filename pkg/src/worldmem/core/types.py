"""Value types shared by every stage: cameras, images, depth maps, frames, clouds.

Arrays held by these types are marked read-only after construction so that a
frame handed to the memory banks cannot be mutated behind their back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 60.0) -> CameraIntrinsics:
        """Square-pixel intrinsics centred on the image with the given horizontal FOV."""
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(d)
        if missing:
            raise ValueError(f"intrinsics missing field(s): {sorted(missing)}")
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-from-camera rigid transform. Camera looks along +Z, x right, y down."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation).reshape(3, 3)
        t = _frozen(self.translation).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> CameraPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
        """Pose at ``eye`` looking at ``target``; ``up`` is the world up direction."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise ValueError("viewing direction is parallel to the up vector")
        right /= n
        down = np.cross(fwd, right)
        return cls(np.column_stack([right, down, fwd]), eye)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> CameraPose:
        Rt = self.rotation.T
        return CameraPose(Rt, -Rt @ self.translation)

    def compose(self, other: CameraPose) -> CameraPose:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image, ``pixels`` shaped (height, width, 3) with channels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"image pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image channels must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def black(cls, width: int, height: int) -> Image:
        return cls(np.zeros((height, width, 3)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric z-depth per pixel. Values <= 0 or non-finite mark invalid pixels."""

    depths: np.ndarray

    def __post_init__(self):
        d = _frozen(self.depths)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"depth map must be a non-empty (H, W) array, got {d.shape}")
        object.__setattr__(self, "depths", d)

    @classmethod
    def invalid(cls, width: int, height: int) -> DepthMap:
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @property
    def valid(self) -> np.ndarray:
        d = self.depths
        with np.errstate(invalid="ignore"):
            return np.isfinite(d) & (d > 0)


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    image: Image
    depth: DepthMap
    pose: CameraPose
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        shape = self.intrinsics.shape
        if (self.image.height, self.image.width) != shape:
            raise ValueError(
                f"frame {self.index}: image is {self.image.width}x{self.image.height}, "
                f"intrinsics say {self.intrinsics.width}x{self.intrinsics.height}"
            )
        if (self.depth.height, self.depth.width) != shape:
            raise ValueError(
                f"frame {self.index}: depth is {self.depth.width}x{self.depth.height}, "
                f"intrinsics say {self.intrinsics.width}x{self.intrinsics.height}"
            )


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    confidences: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        col = _frozen(self.colors).reshape(-1, 3)
        conf = _frozen(self.confidences).reshape(-1)
        if not (len(pos) == len(col) == len(conf)):
            raise ValueError(
                f"point cloud arrays disagree in length: {len(pos)} positions, "
                f"{len(col)} colors, {len(conf)} confidences"
            )
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        if len(conf) and (not np.all(np.isfinite(conf)) or conf.min() < 0):
            raise ValueError("confidences must be finite and nonnegative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "confidences", conf)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concatenate(cls, clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return cls()
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.confidences for c in clouds]),
        )
