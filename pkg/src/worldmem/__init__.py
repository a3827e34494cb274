"""Geometry-grounded spatial memory for autoregressive video world models."""

from worldmem.core import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    Frame,
    Image,
    PointCloud,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "DepthMap",
    "Frame",
    "Image",
    "PointCloud",
]
