"""Query synthesis with exact ground truth.

A query is rendered from a scan cloud at a randomly perturbed camera pose. The
sampled pose is the ground truth by construction. After the missing-pixel
gate and hole filling, optional distortions are applied: distance-dependent
relighting of the 3D points, a random occluding quadrangle and pixel noise.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scanbench.cloud import PointCloud
from scanbench.geometry import EulerAngles, Pose, intrinsics_from_fov, rotation_from_euler
from scanbench.io.manifest import OCCLUSION_RANGE, QueryManifest, QueryRecord, write_manifest
from scanbench.io.ply import load_ply
from scanbench.io.rgbd import RgbdImage, write_rgbd
from scanbench.render import RawRender, RenderParams, fill_holes, quality_gate, render

logger = logging.getLogger(__name__)


class OcclusionRangeError(ValueError):
    """Realized occluder coverage fell outside the allowed range; resample."""


@dataclass(frozen=True)
class SamplingLimits:
    max_horizontal_offset: float = 2.0
    max_vertical_offset: float = 1.0
    yaw_range: tuple = (0.0, 360.0)
    pitch_range: tuple = (-25.0, 25.0)
    roll_range: tuple = (-15.0, 15.0)
    max_missing: float = 0.10
    max_attempts_per_query: int = 50

    def __post_init__(self):
        if self.max_horizontal_offset < 0 or self.max_vertical_offset < 0:
            raise ValueError("offset limits must be non-negative")
        lo, hi = self.pitch_range
        if not -90.0 < lo <= hi < 90.0:
            raise ValueError(f"pitch_range must lie inside (-90, 90), got {self.pitch_range}")
        if self.yaw_range[0] > self.yaw_range[1] or self.roll_range[0] > self.roll_range[1]:
            raise ValueError("angle ranges must be (low, high)")
        if not 0.0 <= self.max_missing <= 1.0:
            raise ValueError("max_missing must lie in [0, 1]")
        if self.max_attempts_per_query < 1:
            raise ValueError("max_attempts_per_query must be at least 1")


@dataclass(frozen=True)
class FlashlightParams:
    gain: float = 4.0
    half_distance: float = 3.0
    enabled: bool = True

    def __post_init__(self):
        if not (self.gain > 0 and self.half_distance > 0):
            raise ValueError("flashlight gain and half distance must be positive")


@dataclass(frozen=True)
class SynthConfig:
    hfov: float = 60.0
    width: int = 1024
    height: int = 768
    render: RenderParams = field(default_factory=RenderParams)
    limits: SamplingLimits = field(default_factory=SamplingLimits)
    flashlight: FlashlightParams = field(default_factory=FlashlightParams)
    occlusion_probability: float = 0.9
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.occlusion_probability <= 1.0:
            raise ValueError("occlusion_probability must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def intrinsics(self):
        return intrinsics_from_fov(self.hfov, self.width, self.height)


# -- pose sampling ----------------------------------------------------------

def query_seed(master_seed: int, index: int) -> int:
    """64-bit per-query seed split from the master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_query_pose(scanner_pose: Pose, limits: SamplingLimits, rng: np.random.Generator) -> Pose:
    h, v = limits.max_horizontal_offset, limits.max_vertical_offset
    offset = np.array([rng.uniform(-h, h), rng.uniform(-h, h), rng.uniform(-v, v)])
    angles = EulerAngles(
        yaw=rng.uniform(*limits.yaw_range),
        pitch=rng.uniform(*limits.pitch_range),
        roll=rng.uniform(*limits.roll_range),
    )
    rotation = rotation_from_euler(angles) @ scanner_pose.rotation
    return Pose.from_center(rotation, scanner_pose.center + offset)


# -- flashlight -------------------------------------------------------------

def flashlight_factor(distance, params: FlashlightParams):
    """Brightness multiplier ``g / (1 + (d/d0)^2)``: g at the camera, g/2 at d0."""
    d = np.asarray(distance, dtype=np.float64)
    return params.gain / (1.0 + (d / params.half_distance) ** 2)


def _lit_colors(xyz: np.ndarray, rgb: np.ndarray, center: np.ndarray, params: FlashlightParams) -> np.ndarray:
    d = np.linalg.norm(np.asarray(xyz, dtype=np.float64) - center, axis=1)
    denom = 1.0 + (d / params.half_distance) ** 2
    lit = np.floor(rgb.astype(np.float64) * params.gain / denom[:, None] + 0.5)
    return np.clip(lit, 0, 255).astype(np.uint8)


def apply_flashlight(cloud: PointCloud, camera_center, params: FlashlightParams) -> PointCloud:
    if not params.enabled:
        return cloud
    center = np.asarray(camera_center, dtype=np.float64)
    return cloud.with_colors(_lit_colors(cloud.xyz, cloud.rgb, center, params))


def relight_render(raw: RawRender, cloud: PointCloud, params: FlashlightParams) -> RawRender:
    """Flashlight applied to the visible points only.

    Visibility does not depend on color, so this equals rendering the relit
    cloud while touching far fewer points.
    """
    if not params.enabled:
        return raw
    hit = raw.point_index[raw.valid_mask]
    rgb = np.zeros_like(raw.rgb)
    rgb[raw.valid_mask] = _lit_colors(np.take(cloud.xyz, hit, axis=0), np.take(cloud.rgb, hit, axis=0),
                                      raw.pose.center, params)
    return RawRender(rgb, raw.depth, raw.valid_mask, raw.point_index, raw.pose, raw.intrinsics)


# -- occlusion --------------------------------------------------------------

def polygon_area(vertices) -> float:
    """Shoelace area (positive for counter-clockwise order in a y-up sense)."""
    p = np.asarray(vertices, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(vertices, width: float, height: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon to the rectangle [0, width] x [0, height]."""
    poly = [tuple(v) for v in np.asarray(vertices, dtype=np.float64)]
    edges = [(0, 0.0, 1), (0, float(width), -1), (1, 0.0, 1), (1, float(height), -1)]
    for axis, bound, sign in edges:
        if not poly:
            break
        out = []
        for i, cur in enumerate(poly):
            prev = poly[i - 1]
            cur_in = sign * (cur[axis] - bound) >= 0
            prev_in = sign * (prev[axis] - bound) >= 0
            if cur_in != prev_in:
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                out.append(cur)
        poly = out
    return np.array(poly, dtype=np.float64).reshape(-1, 2)


def rasterize_convex(vertices, width: int, height: int) -> np.ndarray:
    """Scanline fill: pixel (u, v) is covered when its center (u+.5, v+.5) is inside."""
    p = np.asarray(vertices, dtype=np.float64)
    yc = np.arange(height) + 0.5
    xl = np.full(height, np.inf)
    xr = np.full(height, -np.inf)
    for (x0, y0), (x1, y1) in zip(p, np.roll(p, -1, axis=0)):
        if y0 == y1:
            continue
        lo, hi = min(y0, y1), max(y0, y1)
        rows = (yc >= lo) & (yc < hi)
        x = x0 + (yc[rows] - y0) * (x1 - x0) / (y1 - y0)
        xl[rows] = np.minimum(xl[rows], x)
        xr[rows] = np.maximum(xr[rows], x)
    mask = np.zeros((height, width), dtype=bool)
    for row in np.flatnonzero(np.isfinite(xl)):
        a = int(max(0.0, np.ceil(xl[row] - 0.5)))
        b = int(min(width - 1.0, np.floor(xr[row] - 0.5)))
        if b >= a:
            mask[row, a:b + 1] = True
    return mask


@dataclass(frozen=True)
class OcclusionSpec:
    vertices: tuple  # four (x, y) pixel coordinates in convex order
    fill_rgb: tuple
    target_fraction: float | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.shape != (4, 2) or not np.isfinite(v).all():
            raise ValueError("occluder needs 4 finite (x, y) vertices")
        edges = np.roll(v, -1, axis=0) - v
        turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if not ((turns > 0).all() or (turns < 0).all()):
            raise ValueError("occluder quadrangle is not strictly convex")
        rgb = tuple(int(c) for c in self.fill_rgb)
        if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
            raise ValueError(f"fill_rgb must be 3 values in [0, 255], got {self.fill_rgb}")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        object.__setattr__(self, "fill_rgb", rgb)

    def flat_vertices(self) -> tuple:
        return tuple(c for xy in self.vertices for c in xy)


def occlusion_mask(spec: OcclusionSpec, width: int, height: int) -> np.ndarray:
    return rasterize_convex(clip_polygon(spec.vertices, width, height), width, height)


def apply_occlusion(image: RgbdImage, spec: OcclusionSpec) -> tuple[RgbdImage, float]:
    """Paint the occluder and invalidate its depth; returns the image and realized coverage."""
    w, h = image.intrinsics.width, image.intrinsics.height
    mask = occlusion_mask(spec, w, h)
    fraction = float(mask.sum()) / (w * h)
    lo, hi = OCCLUSION_RANGE
    if not lo <= fraction <= hi:
        raise OcclusionRangeError(f"occluder covers {fraction:.4f} of the image, outside [{lo}, {hi}]")
    rgb = image.rgb.copy()
    rgb[mask] = spec.fill_rgb
    depth = np.where(mask, 0.0, image.depth)
    return image.replace(rgb=rgb, depth=depth, valid_mask=image.valid_mask & ~mask), fraction


def sample_occlusion(width: int, height: int, rng: np.random.Generator, max_tries: int = 20):
    """Random convex quadrangle whose clipped coverage lies in the allowed range.

    Vertices sit on a circle around a uniform center, at sorted uniform angles;
    the radius is scaled so the unclipped area hits a uniform target fraction.
    Returns ``(spec, realized_fraction)``.
    """
    lo, hi = OCCLUSION_RANGE
    for _ in range(max_tries):
        center = rng.uniform([0.0, 0.0], [width, height])
        target = rng.uniform(lo, hi)
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, 4))
        color = rng.integers(10, 61, 3)
        gaps = np.diff(np.append(angles, angles[0] + 2.0 * np.pi))
        shape_area = 0.5 * np.sin(gaps).sum()
        if shape_area < 0.05:
            continue
        radius = np.sqrt(target * width * height / shape_area)
        verts = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
        try:
            spec = OcclusionSpec(verts, color, target)
        except ValueError:
            continue
        fraction = float(occlusion_mask(spec, width, height).sum()) / (width * height)
        if lo <= fraction <= hi:
            return spec, fraction
    raise OcclusionRangeError(f"no admissible occluder in {max_tries} tries")


# -- noise ------------------------------------------------------------------

def apply_noise(image: RgbdImage, sigma: float, rng: np.random.Generator) -> RgbdImage:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return image
    noisy = image.rgb.astype(np.float64) + rng.normal(0.0, sigma, image.rgb.shape)
    return image.replace(rgb=np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8))


# -- pipeline ---------------------------------------------------------------

@dataclass
class QueryResult:
    record: QueryRecord
    image: RgbdImage | None = None


def query_id(index: int, n: int) -> str:
    return f"q{index:0{max(3, len(str(n - 1)))}d}"


def synthesize_query(index: int, n: int, entry, cloud: PointCloud, config: SynthConfig,
                     master_seed: int) -> QueryResult:
    """One query: sample, render, gate, fill, distort."""
    qid = query_id(index, n)
    seed = query_seed(master_seed, index)
    rng = np.random.default_rng(seed)
    rec = QueryRecord(qid, entry.scan_id, seed)
    intrinsics = config.intrinsics
    raw = None
    for attempt in range(1, config.limits.max_attempts_per_query + 1):
        pose = sample_query_pose(entry.scanner_pose, config.limits, rng)
        candidate = render(cloud, pose, intrinsics, config.render)
        if quality_gate(candidate, config.limits.max_missing):
            raw = candidate
            break
    rec.attempts = attempt
    if raw is None:
        rec.status = "skipped"
        logger.info("%s skipped after %d attempts", qid, attempt)
        return QueryResult(rec)

    rec.pose = pose
    rec.missing_fraction = raw.missing_fraction
    if config.flashlight.enabled:
        rec.flashlight = True
        rec.flash_gain = config.flashlight.gain
        rec.flash_half_distance = config.flashlight.half_distance
        raw = relight_render(raw, cloud, config.flashlight)
    image = fill_holes(raw, config.render, image_id=qid)
    if rng.random() < config.occlusion_probability:
        spec, _ = sample_occlusion(intrinsics.width, intrinsics.height, rng)
        image, fraction = apply_occlusion(image, spec)
        rec.occlusion = True
        rec.occlusion_vertices = spec.flat_vertices()
        rec.occlusion_rgb = spec.fill_rgb
        rec.occlusion_fraction = fraction
    if config.noise_sigma > 0:
        image = apply_noise(image, config.noise_sigma, rng)
        rec.noise_sigma = config.noise_sigma
    return QueryResult(rec, image)


def synthesize_queries(registry, n: int, config: SynthConfig | None = None, master_seed: int = 0,
                       out_dir=None, workers: int = 1, clouds: dict | None = None,
                       keep_images: bool = False):
    """Synthesize ``n`` queries round-robin over the registry's scans.

    With ``out_dir`` set, images go to ``out_dir/queries`` and the manifest to
    ``out_dir/manifest.txt``. ``clouds`` may map scan ids to preloaded clouds.
    Returns the manifest, plus the list of :class:`QueryResult` when
    ``keep_images`` is true.
    """
    config = config or SynthConfig()
    entries = list(registry)
    if not entries:
        raise ValueError("registry is empty")
    if n < 1:
        raise ValueError(f"query count must be positive, got {n}")
    clouds = dict(clouds or {})
    by_path = {}  # scans may share a cloud file; load each file once
    for e in entries[:n]:
        if e.scan_id not in clouds:
            key = Path(e.cloud_path).resolve()
            if key not in by_path:
                by_path[key] = load_ply(e.cloud_path)
            cloud = copy.copy(by_path[key])
            cloud.scan_id = e.scan_id
            clouds[e.scan_id] = cloud
    qdir = Path(out_dir) / "queries" if out_dir is not None else None

    def one(i):
        entry = entries[i % len(entries)]
        res = synthesize_query(i, n, entry, clouds[entry.scan_id], config, master_seed)
        if qdir is not None and res.image is not None:
            write_rgbd(res.image, qdir)
        if not keep_images:
            res.image = None
        return res

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(i) for i in range(n)]

    manifest = QueryManifest([r.record for r in results])
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_manifest(manifest, Path(out_dir) / "manifest.txt")
    return (manifest, results) if keep_images else manifest
