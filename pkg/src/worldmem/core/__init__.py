from worldmem.core.geometry import (
    CAM_TO_WORLD,
    WORLD_TO_CAM,
    backproject,
    backproject_depth,
    project,
    project_points,
    transform,
)
from worldmem.core.io import FormatError
from worldmem.core.types import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    Frame,
    Image,
    PointCloud,
)

__all__ = [
    "CAM_TO_WORLD",
    "WORLD_TO_CAM",
    "CameraIntrinsics",
    "CameraPose",
    "DepthMap",
    "FormatError",
    "Frame",
    "Image",
    "PointCloud",
    "backproject",
    "backproject_depth",
    "project",
    "project_points",
    "transform",
]
