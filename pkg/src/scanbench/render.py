"""Point-cloud view synthesis.

Points are projected with a pinhole model, splatted into square footprints
and resolved with a z-buffer. Per pixel the smallest depth wins; candidates
within ``depth_tie_epsilon`` of that minimum are decided by the lowest point
index, so the result never depends on point order or on how the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scanbench.cloud import PointCloud
from scanbench.geometry import CameraIntrinsics, Pose
from scanbench.io.rgbd import RgbdImage

_NO_POINT = np.iinfo(np.int64).max


@dataclass(frozen=True)
class RenderParams:
    z_near: float = 0.1
    splat_radius: int = 1
    depth_tie_epsilon: float = 1e-6
    max_fill_iterations: int = 100

    def __post_init__(self):
        if not self.z_near > 0:
            raise ValueError(f"z_near must be positive, got {self.z_near}")
        if int(self.splat_radius) != self.splat_radius or not 0 <= self.splat_radius <= 3:
            raise ValueError(f"splat_radius must be an integer in [0, 3], got {self.splat_radius}")
        if self.depth_tie_epsilon < 0:
            raise ValueError("depth_tie_epsilon must be non-negative")
        if self.max_fill_iterations < 0:
            raise ValueError("max_fill_iterations must be non-negative")


@dataclass(eq=False)
class RawRender:
    rgb: np.ndarray
    depth: np.ndarray
    valid_mask: np.ndarray
    point_index: np.ndarray  # winning point per pixel, -1 where empty
    pose: Pose
    intrinsics: CameraIntrinsics

    @property
    def missing_fraction(self) -> float:
        return float((~self.valid_mask).sum()) / self.valid_mask.size

    def recolored(self, colors: np.ndarray) -> "RawRender":
        """Same visibility with per-point colors replaced (e.g. after relighting)."""
        rgb = np.zeros_like(self.rgb)
        rgb[self.valid_mask] = np.asarray(colors, dtype=np.uint8)[self.point_index[self.valid_mask]]
        return RawRender(rgb, self.depth, self.valid_mask, self.point_index, self.pose, self.intrinsics)

    def to_image(self, image_id: str = "") -> RgbdImage:
        return RgbdImage(self.rgb, self.depth, self.valid_mask, self.pose, self.intrinsics, image_id)


def project(points: np.ndarray, pose: Pose, intrinsics: CameraIntrinsics):
    """Continuous pixel coordinates and camera depth of world points."""
    cam = pose.transform(np.asarray(points, dtype=np.float64))
    z = cam[..., 2]
    u = intrinsics.focal_px * cam[..., 0] / z + intrinsics.cx
    v = intrinsics.focal_px * cam[..., 1] / z + intrinsics.cy
    return u, v, z


def render(cloud: PointCloud, pose: Pose, intrinsics: CameraIntrinsics,
           params: RenderParams | None = None, subset=None) -> RawRender:
    """Z-buffered splat rendering of ``cloud`` seen from ``pose``.

    ``subset`` optionally restricts rendering to the given point indices (any
    order). Points outside it are treated as absent; indices keep referring to
    the full cloud, so tie-breaking is unchanged.
    """
    params = params or RenderParams()
    if len(cloud) == 0:
        raise ValueError("cannot render an empty point cloud")
    w, h, f, r = intrinsics.width, intrinsics.height, intrinsics.focal_px, params.splat_radius

    if subset is None:
        ids, xyz = None, cloud.xyz
    else:
        ids = np.asarray(subset, dtype=np.int64)
        xyz = np.take(cloud.xyz, ids, axis=0)
    cam = pose.transform(xyz.astype(np.float64, copy=False))
    z = cam[:, 2]
    front = np.flatnonzero(z >= params.z_near)
    cam, z = cam[front], z[front]
    u = np.floor(f * cam[:, 0] / z + intrinsics.cx + 0.5)
    v = np.floor(f * cam[:, 1] / z + intrinsics.cy + 0.5)
    inside = (u >= -r) & (u <= w - 1 + r) & (v >= -r) & (v <= h - 1 + r)
    idx = front[inside] if ids is None else ids[front[inside]]
    z = z[inside]

    # Work on a grid padded by 2r so every splat stays in bounds. Pass 1: the
    # z-buffer is the per-center minimum spread over the (2r+1)^2 footprint.
    pad = 2 * r
    gw, gh = w + 2 * pad, h + 2 * pad
    cell = (v[inside].astype(np.int64) + pad) * gw + (u[inside].astype(np.int64) + pad)
    center_min = np.full(gw * gh, np.inf)
    np.minimum.at(center_min, cell, z)
    cm = center_min.reshape(gh, gw)
    zbuf = np.full((gh, gw), np.inf)
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            dst = zbuf[max(dv, 0):gh + min(dv, 0), max(du, 0):gw + min(du, 0)]
            np.minimum(dst, cm[max(-dv, 0):gh + min(-dv, 0), max(-du, 0):gw + min(-du, 0)], out=dst)
    zbuf[:pad] = zbuf[gh - pad:] = -np.inf  # padding is not image: nothing may win there
    zbuf[:, :pad] = zbuf[:, gw - pad:] = -np.inf
    zbuf = zbuf.ravel()

    # Pass 2: lowest index among points within epsilon of the pixel minimum.
    # Every pixel a point covers has zbuf <= its center minimum, so points
    # beyond center minimum + epsilon can never qualify.
    keep = z <= center_min[cell] + params.depth_tie_epsilon
    cell, z, idx = cell[keep], z[keep], idx[keep]
    if ids is not None and np.any(idx[1:] < idx[:-1]):  # rank order must be index order
        order = np.argsort(idx)
        cell, z, idx = cell[order], z[order], idx[order]
    rank = np.arange(idx.size, dtype=np.int64)
    winner = np.full(gw * gh, _NO_POINT, dtype=np.int64)
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            pix = cell + (dv * gw + du)
            near = z <= zbuf[pix] + params.depth_tie_epsilon
            np.minimum.at(winner, pix[near], rank[near])

    winner = winner.reshape(gh, gw)[pad:gh - pad, pad:gw - pad].ravel()
    valid = winner != _NO_POINT
    won = winner[valid]
    point_index = np.full(w * h, -1, dtype=np.int64)
    point_index[valid] = idx[won]
    rgb = np.zeros((w * h, 3), dtype=np.uint8)
    # gather whole 3-byte pixels at once through a void view
    colors = np.ascontiguousarray(cloud.rgb, dtype=np.uint8).view("V3").ravel()
    rgb.view("V3").ravel()[valid] = colors[point_index[valid]]
    # depth of the winning point itself, which may exceed the pixel minimum by < epsilon
    depth = np.zeros(w * h)
    depth[valid] = z[won]
    return RawRender(
        rgb.reshape(h, w, 3), depth.reshape(h, w), valid.reshape(h, w),
        point_index.reshape(h, w), pose, intrinsics,
    )


def quality_gate(raw: RawRender, max_missing: float) -> bool:
    if not 0.0 <= max_missing <= 1.0:
        raise ValueError(f"max_missing must lie in [0, 1], got {max_missing}")
    return raw.missing_fraction <= max_missing


def fill_holes(raw: RawRender, params: RenderParams | None = None, image_id: str = "",
               trace: list | None = None) -> RgbdImage:
    """Iteratively fill invalid pixels from their valid 8-neighbors.

    Each sweep reads the previous buffer only. A pixel with at least one valid
    neighbor takes the per-channel mean of those neighbors (color rounded half
    up), clamped to their per-channel [min, max]; depth is filled the same way.
    Pixels still empty after ``max_fill_iterations`` sweeps stay invalid with
    zero color and depth.

    If ``trace`` is a list, one ``(flat_indices, values, lo, hi)`` tuple is
    appended per sweep, with ``values``/``lo``/``hi`` shaped (n, 4) as
    (r, g, b, depth).
    """
    params = params or RenderParams()
    h, w = raw.valid_mask.shape
    mask = raw.valid_mask
    if not mask.any():
        raise ValueError("cannot fill a render with no valid pixels")

    holes = np.flatnonzero(~mask)
    if holes.size == 0:
        return RgbdImage(raw.rgb.copy(), raw.depth.copy(), mask.copy(), raw.pose, raw.intrinsics, image_id)

    # one-pixel padded, flattened, channel-major (r, g, b, depth) buffers
    wp = w + 2
    valid = np.zeros((h + 2, wp), dtype=bool)
    valid[1:-1, 1:-1] = mask
    chan = np.zeros((4, h + 2, wp))
    for c in range(3):
        chan[c, 1:-1, 1:-1] = raw.rgb[..., c]
    chan[3, 1:-1, 1:-1] = raw.depth
    valid, chan = valid.ravel(), chan.reshape(4, -1)
    holes = (holes // w + 1) * wp + holes % w + 1
    chan[:, holes] = 0.0
    fillable = np.zeros(valid.size, dtype=bool)  # interior pixels still empty
    fillable[holes] = True
    nbr = (-wp - 1, -wp, -wp + 1, -1, 1, wp - 1, wp, wp + 1)
    touched = np.zeros(valid.size, dtype=bool)
    for o in nbr:
        touched[holes[valid[holes + o]]] = True
    frontier = np.flatnonzero(touched)
    touched[:] = False

    for _ in range(params.max_fill_iterations):
        if frontier.size == 0:
            break
        n = frontier.size
        count = np.zeros(n)
        total = np.zeros((4, n))
        lo = np.full((4, n), np.inf)
        hi = np.full((4, n), -np.inf)
        for o in nbr:
            j = frontier + o
            ok = valid[j].astype(np.float64)
            penalty = np.where(ok > 0, 0.0, np.inf)  # buffered values are always finite
            vals = np.take(chan, j, axis=1)
            count += ok
            total += vals * ok
            np.minimum(lo, vals + penalty, out=lo)
            np.maximum(hi, vals - penalty, out=hi)
        mean = total / count
        mean[:3] = np.floor(mean[:3] + 0.5)
        new = np.clip(mean, lo, hi)
        chan[:, frontier] = new
        valid[frontier] = True
        fillable[frontier] = False
        if trace is not None:
            rows, cols = np.divmod(frontier, wp)
            trace.append(((rows - 1) * w + (cols - 1), new.T, lo.T, hi.T))
        for o in nbr:
            j = frontier + o
            touched[j[fillable[j]]] = True
        frontier = np.flatnonzero(touched)
        touched[frontier] = False

    valid = valid.reshape(h + 2, wp)[1:-1, 1:-1].copy()
    chan = chan.reshape(4, h + 2, wp)[:, 1:-1, 1:-1]
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    for c in range(3):
        rgb[..., c] = chan[c]
    depth = chan[3].copy()
    return RgbdImage(rgb, depth, valid, raw.pose, raw.intrinsics, image_id)


def unproject(image: RgbdImage, u: int, v: int) -> np.ndarray:
    """World point seen at pixel ``(u, v)`` (column, row)."""
    k = image.intrinsics
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise ValueError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    d = float(image.depth[v, u])
    if not image.valid_mask[v, u] or d <= 0:
        raise ValueError(f"pixel ({u}, {v}) has no valid depth")
    cam = d * np.array([(u - k.cx) / k.focal_px, (v - k.cy) / k.focal_px, 1.0])
    return image.pose.rotation.T @ (cam - image.pose.translation)
