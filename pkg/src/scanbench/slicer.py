"""Slice a registered scan into a ring of perspective RGBD database cutouts."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from scanbench.cloud import PointCloud
from scanbench.geometry import EulerAngles, Pose, intrinsics_from_fov, rotation_from_euler
from scanbench.io.results import database_image_id
from scanbench.render import RenderParams, fill_holes, render

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SliceConfig:
    yaw_count: int = 12
    yaw_stride: float = 30.0
    pitch_ring: tuple = (-30.0, 0.0, 30.0)
    hfov: float = 60.0
    width: int = 1024
    height: int = 768
    render: RenderParams = field(default_factory=RenderParams)

    def __post_init__(self):
        if self.yaw_count < 1 or not self.pitch_ring:
            raise ValueError("need at least one yaw step and one pitch")
        object.__setattr__(self, "pitch_ring", tuple(float(p) for p in self.pitch_ring))

    @property
    def images_per_scan(self) -> int:
        return self.yaw_count * len(self.pitch_ring)

    @property
    def intrinsics(self):
        return intrinsics_from_fov(self.hfov, self.width, self.height)


@dataclass
class SliceResult:
    images: list
    missing_fractions: dict  # image_id -> pre-fill missing fraction
    skipped: dict  # image_id -> reason


def camera_from_scanner(scanner_pose: Pose, angles: EulerAngles) -> Pose:
    """Camera at the scanner origin, oriented by ``angles`` in the scanner's Z-up frame."""
    rotation = rotation_from_euler(angles) @ scanner_pose.rotation
    return Pose.from_center(rotation, scanner_pose.center)


def generate_cutout_poses(scanner_pose: Pose, config: SliceConfig | None = None):
    """``(suffix, pose)`` pairs, pitch-major: index = pitch_index * yaw_count + yaw_index."""
    config = config or SliceConfig()
    out = []
    for pi, pitch in enumerate(config.pitch_ring):
        for yi in range(config.yaw_count):
            idx = pi * config.yaw_count + yi
            angles = EulerAngles(yaw=yi * config.yaw_stride, pitch=pitch)
            out.append((f"{idx:03d}", camera_from_scanner(scanner_pose, angles)))
    return out


def _border_directions(pose_angles: EulerAngles, intrinsics, margin_px: int) -> np.ndarray:
    """Scanner-frame ray directions along the image border, widened by the splat margin.

    Yaw is left out; callers measure headings relative to it.
    """
    k = intrinsics
    m = margin_px + 1
    xs = np.linspace(-k.cx - m, k.width - k.cx + m, 256)
    ys = np.linspace(-k.cy - m, k.height - k.cy + m, 256)
    border = np.concatenate([
        np.stack([xs, np.full_like(xs, ys[0])], 1), np.stack([xs, np.full_like(xs, ys[-1])], 1),
        np.stack([np.full_like(ys, xs[0]), ys], 1), np.stack([np.full_like(ys, xs[-1]), ys], 1),
    ])
    rays = np.column_stack([border / k.focal_px, np.ones(len(border))])
    world_from_cam = rotation_from_euler(EulerAngles(0.0, pose_angles.pitch, pose_angles.roll)).T
    return rays @ world_from_cam.T


def _elevations(dirs: np.ndarray) -> np.ndarray:
    return np.degrees(np.arctan2(dirs[:, 2], np.hypot(dirs[:, 0], dirs[:, 1])))


def _sees_pole(pose_angles: EulerAngles, intrinsics, margin_px: int, up: bool) -> bool:
    """Whether straight up (or down) projects inside the image widened by the margin."""
    k = intrinsics
    m = margin_px + 1
    cam = rotation_from_euler(EulerAngles(0.0, pose_angles.pitch, pose_angles.roll)) @ [0.0, 0.0, 1.0 if up else -1.0]
    if cam[2] <= 1e-9:
        return False  # behind the camera or projecting to infinity
    x, y = k.focal_px * cam[0] / cam[2], k.focal_px * cam[1] / cam[2]
    return -k.cx - m <= x <= k.width - k.cx + m and -k.cy - m <= y <= k.height - k.cy + m


def heading_window(pose_angles: EulerAngles, intrinsics, margin_px: int) -> float | None:
    """Half-width in degrees of the scanner-frame heading interval a cutout can see.

    Found by sampling the image border (heading extremes lie on it). Returns
    None when the frustum contains a vertical direction and every heading is
    visible.
    """
    dirs = _border_directions(pose_angles, intrinsics, margin_px)
    if np.abs(_elevations(dirs)).max() > 85.0 or any(
            _sees_pole(pose_angles, intrinsics, margin_px, up) for up in (True, False)):
        return None
    return float(np.degrees(np.abs(np.arctan2(dirs[:, 1], dirs[:, 0]))).max()) + 2.0


def elevation_window(pose_angles: EulerAngles, intrinsics, margin_px: int) -> tuple:
    """Scanner-frame elevation interval (degrees) a cutout can see, with 2 degrees slack.

    Elevation has no interior extremum except at the poles, so the border
    bounds it unless a pole is in view; a frustum containing or reaching near
    a pole is opened up to +-90.
    """
    el = _elevations(_border_directions(pose_angles, intrinsics, margin_px))
    lo, hi = float(el.min()) - 2.0, float(el.max()) + 2.0
    if hi > 83.0 or _sees_pole(pose_angles, intrinsics, margin_px, up=True):
        hi = 90.0
    if lo < -83.0 or _sees_pole(pose_angles, intrinsics, margin_px, up=False):
        lo = -90.0
    return lo, hi


class _HeadingIndex:
    """Point indices bucketed by whole-degree scanner-frame heading.

    Lets each cutout gather its candidate points without a pass over the
    whole cloud. Candidates come back sorted by point index.
    """

    def __init__(self, local_xyz: np.ndarray):
        x, y, z = local_xyz[:, 0], local_xyz[:, 1], local_xyz[:, 2]
        heading = np.degrees(np.arctan2(y, x))
        self.elevation = np.degrees(np.arctan2(z, np.hypot(x, y)))
        bins = (np.floor(heading).astype(np.int16) + 360) % 360
        self.order = np.argsort(bins, kind="stable")
        self.starts = np.searchsorted(bins[self.order], np.arange(361))

    def candidates(self, yaw: float, half_window: float | None, elev: tuple) -> np.ndarray:
        if half_window is None or 2.0 * half_window >= 359.0:
            idx = self.order
        else:
            lo = int(np.floor(yaw - half_window))
            hi = int(np.floor(yaw + half_window))
            parts = []
            for b in range(lo, hi + 1):
                b %= 360
                parts.append(self.order[self.starts[b]:self.starts[b + 1]])
            idx = np.sort(np.concatenate(parts))  # ascending: cheaper gathers, no re-sort when rendering
        if elev[0] > -90.0 or elev[1] < 90.0:
            e = self.elevation[idx]
            idx = idx[(e >= elev[0]) & (e <= elev[1])]
        return idx


def render_view(cloud: PointCloud, pose: Pose, intrinsics, params: RenderParams):
    """Render + hole-fill; returns (filled image, raw render)."""
    raw = render(cloud, pose, intrinsics, params)
    return fill_holes(raw, params), raw


def slice_scan(cloud: PointCloud, scanner_pose: Pose, config: SliceConfig | None = None,
               scan_id: str | None = None, workers: int = 1) -> SliceResult:
    config = config or SliceConfig()
    if len(cloud) == 0:
        raise ValueError("cannot slice an empty point cloud")
    scan_id = scan_id or cloud.scan_id
    intrinsics = config.intrinsics
    poses = generate_cutout_poses(scanner_pose, config)
    index = _HeadingIndex(scanner_pose.transform(cloud.xyz))

    def one(item):
        suffix, pose = item
        idx = int(suffix)
        image_id = database_image_id(scan_id, idx)
        angles = EulerAngles(yaw=(idx % config.yaw_count) * config.yaw_stride,
                             pitch=config.pitch_ring[idx // config.yaw_count])
        margin = config.render.splat_radius
        subset = index.candidates(angles.yaw, heading_window(angles, intrinsics, margin),
                                  elevation_window(angles, intrinsics, margin))
        try:
            raw = render(cloud, pose, intrinsics, config.render, subset=subset)
            image = fill_holes(raw, config.render, image_id=image_id)
        except ValueError as exc:
            return image_id, None, None, str(exc)
        return image_id, image, raw.missing_fraction, None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, poses))
    else:
        results = [one(p) for p in poses]

    out = SliceResult([], {}, {})
    for image_id, image, missing, err in results:
        if err is not None:
            logger.warning("%s skipped: %s", image_id, err)
            out.skipped[image_id] = err
            continue
        out.images.append(image)
        out.missing_fractions[image_id] = missing
    return out


def yaw_coverage(config: SliceConfig) -> np.ndarray:
    """Per-degree count of cutouts whose horizontal field of view covers that heading."""
    counts = np.zeros(360, dtype=int)
    half = config.hfov / 2
    headings = np.arange(360) + 0.5
    for yi in range(config.yaw_count):
        d = (headings - yi * config.yaw_stride + 180.0) % 360.0 - 180.0
        counts += np.abs(d) <= half
    return counts

