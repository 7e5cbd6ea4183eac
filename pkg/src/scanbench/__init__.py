"""Visual-localization benchmark construction from colored laser scans."""

from scanbench.cloud import PointCloud
from scanbench.geometry import (
    CameraIntrinsics,
    EulerAngles,
    Pose,
    intrinsics_from_fov,
    pose_from_euler,
    rotation_error,
    translation_error,
)

__all__ = [
    "CameraIntrinsics",
    "EulerAngles",
    "PointCloud",
    "Pose",
    "intrinsics_from_fov",
    "pose_from_euler",
    "rotation_error",
    "translation_error",
]
