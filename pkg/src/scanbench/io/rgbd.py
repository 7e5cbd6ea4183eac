"""RGBD image container and its on-disk form.

Each image is three files sharing the ``image_id`` stem: an 8-bit RGB PNG
(focal length kept in a text chunk), a 16-bit depth PNG in millimeters, and
the pose text file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from scanbench.geometry import CameraIntrinsics, Pose, format_pose, parse_pose

logger = logging.getLogger(__name__)

DEPTH_SCALE = 1000.0  # stored units per meter
DEPTH_MAX_STORED = 65535


@dataclass(eq=False)
class RgbdImage:
    rgb: np.ndarray
    depth: np.ndarray
    valid_mask: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics
    image_id: str = ""

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.rgb.shape != shape + (3,) or self.rgb.dtype != np.uint8:
            raise ValueError(f"rgb must be uint8 {shape + (3,)}, got {self.rgb.dtype} {self.rgb.shape}")
        if self.depth.shape != shape or self.valid_mask.shape != shape:
            raise ValueError("depth/mask dimensions disagree with intrinsics")
        if (self.depth < 0).any():
            raise ValueError("negative depth")
        if (self.valid_mask & (self.depth == 0)).any():
            raise ValueError("valid pixel with zero depth")

    def replace(self, **changes) -> "RgbdImage":
        fields = dict(rgb=self.rgb, depth=self.depth, valid_mask=self.valid_mask,
                      pose=self.pose, intrinsics=self.intrinsics, image_id=self.image_id)
        fields.update(changes)
        return RgbdImage(**fields)


def quantize_depth(depth: np.ndarray) -> tuple[np.ndarray, int]:
    """Meters to uint16 millimeters; returns the raster and the saturated-pixel count."""
    mm = np.floor(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE + 0.5)
    saturated = int((mm > DEPTH_MAX_STORED).sum())
    return np.clip(mm, 0, DEPTH_MAX_STORED).astype(np.uint16), saturated


def rgbd_paths(directory, image_id: str):
    d = Path(directory)
    return (d / f"{image_id}.rgb.png", d / f"{image_id}.depth.png", d / f"{image_id}.pose.txt")


def write_rgbd(image: RgbdImage, directory) -> int:
    """Persist ``image`` under ``directory``; returns the count of saturated depth pixels."""
    rgb_path, depth_path, pose_path = rgbd_paths(directory, image.image_id)
    depth_mm, saturated = quantize_depth(np.where(image.valid_mask, image.depth, 0.0))
    if saturated:
        logger.warning("%s: %d depth pixels beyond %.3f m saturated",
                       image.image_id, saturated, DEPTH_MAX_STORED / DEPTH_SCALE)
    info = PngImagePlugin.PngInfo()
    info.add_text("focal_px", repr(image.intrinsics.focal_px))
    try:
        Path(directory).mkdir(parents=True, exist_ok=True)
        Image.fromarray(image.rgb).save(rgb_path, pnginfo=info, compress_level=1)
        Image.fromarray(depth_mm).save(depth_path, compress_level=1)
        pose_path.write_text(format_pose(image.pose), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed to write {image.image_id} to {directory}: {exc}") from exc
    return saturated


def read_rgbd(directory, image_id: str) -> RgbdImage:
    rgb_path, depth_path, pose_path = rgbd_paths(directory, image_id)
    try:
        with Image.open(rgb_path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
            focal = float(im.text["focal_px"])
        with Image.open(depth_path) as im:
            depth_mm = np.asarray(im, dtype=np.uint16)
        pose = parse_pose(pose_path.read_text(encoding="utf-8"))
    except (OSError, KeyError) as exc:
        raise OSError(f"failed to read {image_id} from {directory}: {exc}") from exc
    h, w = rgb.shape[:2]
    depth = depth_mm.astype(np.float64) / DEPTH_SCALE
    return RgbdImage(rgb, depth, depth_mm > 0, pose, CameraIntrinsics(focal, w, h), image_id)
