"""Procedural scenes for tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from scanbench.cloud import PointCloud
from scanbench.geometry import Pose
from scanbench.io.ply import save_ply
from scanbench.io.registry import ScanEntry, write_scan_registry

# wall colors, in order: +X, -X, +Y, -Y, floor, ceiling
WALL_COLORS = np.array(
    [
        [200, 40, 40],
        [40, 200, 40],
        [40, 40, 200],
        [200, 200, 40],
        [120, 120, 120],
        [230, 230, 230],
    ],
    dtype=np.float64,
)


def _grid(a_len, b_len, spacing):
    a = np.arange(spacing / 2, a_len, spacing)
    b = np.arange(spacing / 2, b_len, spacing)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return aa.ravel(), bb.ravel()


def room_cloud(size=(8.0, 6.0, 3.0), spacing: float = 0.05, seed: int = 0,
               origin=(0.0, 0.0, 0.0), scan_id: str = "room") -> PointCloud:
    """Axis-aligned box room with one base color per face and a 1 m checker texture.

    The room spans ``origin`` to ``origin + size``; points are jittered on each
    face by a quarter of the spacing.
    """
    sx, sy, sz = size
    rng = np.random.default_rng(seed)
    faces = []
    # (fixed axis, fixed value, free axes, free extents)
    specs = [
        (0, sx, (1, 2), (sy, sz)),
        (0, 0.0, (1, 2), (sy, sz)),
        (1, sy, (0, 2), (sx, sz)),
        (1, 0.0, (0, 2), (sx, sz)),
        (2, 0.0, (0, 1), (sx, sy)),
        (2, sz, (0, 1), (sx, sy)),
    ]
    for k, (axis, value, (i, j), (li, lj)) in enumerate(specs):
        a, b = _grid(li, lj, spacing)
        a = np.clip(a + rng.uniform(-spacing / 4, spacing / 4, a.size), 0, li)
        b = np.clip(b + rng.uniform(-spacing / 4, spacing / 4, b.size), 0, lj)
        pts = np.empty((a.size, 3))
        pts[:, axis] = value
        pts[:, i] = a
        pts[:, j] = b
        checker = (np.floor(a) + np.floor(b)) % 2
        shade = np.where(checker == 0, 1.0, 0.7)[:, None]
        col = WALL_COLORS[k] * shade + rng.normal(0.0, 6.0, (a.size, 3))
        faces.append((pts, np.clip(np.rint(col), 0, 255)))
    xyz = np.concatenate([f[0] for f in faces]) + np.asarray(origin, dtype=np.float64)
    rgb = np.concatenate([f[1] for f in faces]).astype(np.uint8)
    return PointCloud(xyz, rgb, scan_id)


def scanner_at(center) -> Pose:
    """Level scanner pose (identity orientation) located at ``center``."""
    return Pose.from_center(np.eye(3), np.asarray(center, dtype=np.float64))


def write_room_dataset(directory, n_scans: int, spacing: float = 0.05, size=(8.0, 6.0, 3.0),
                       shared_cloud: bool = False) -> Path:
    """Write ``n_scans`` room clouds plus a registry; returns the registry path.

    Scans are placed near the room center with small deterministic offsets.
    With ``shared_cloud`` every entry points at the same PLY file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    center = np.array(size) / 2.0
    shared = None
    for i in range(n_scans):
        scan_id = f"scan{i:03d}"
        if shared_cloud:
            if shared is None:
                shared = directory / "room.ply"
                save_ply(room_cloud(size, spacing, seed=0), shared)
            path = shared
        else:
            path = directory / f"{scan_id}.ply"
            save_ply(room_cloud(size, spacing, seed=i, scan_id=scan_id), path)
        offset = np.array([((i * 7) % 5 - 2) * 0.2, ((i * 3) % 5 - 2) * 0.2, 0.0])
        entries.append(ScanEntry(scan_id, Path(path.name), scanner_at(center + offset)))
    reg = directory / "registry.tsv"
    write_scan_registry(entries, reg)
    return reg


def sphere_cloud(n_points: int, radius: float = 5.0, center=(0.0, 0.0, 0.0),
                 scan_id: str = "sphere") -> PointCloud:
    """Fibonacci-lattice sphere, colored in 30-degree heading sectors and elevation bands.

    A sphere seen from its center is covered evenly in every direction, so
    every cutout of a scanner placed there has content.
    """
    i = np.arange(n_points) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n_points)
    azimuth = np.pi * (1.0 + 5.0 ** 0.5) * i
    unit = np.column_stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)])
    sector = (np.floor(np.degrees(np.arctan2(unit[:, 1], unit[:, 0])) / 30.0) % 6).astype(int)
    band = np.floor(np.degrees(polar) / 45.0) % 2
    rgb = WALL_COLORS[sector] * np.where(band == 0, 1.0, 0.7)[:, None]
    xyz = radius * unit + np.asarray(center, dtype=np.float64)
    return PointCloud(xyz, np.rint(rgb).astype(np.uint8), scan_id)


def write_sphere_dataset(directory, n_scans: int, n_points: int = 2_000_000, radius: float = 5.0) -> Path:
    """Registry of ``n_scans`` scans sharing one sphere PLY, scanners at its center."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ply(sphere_cloud(n_points, radius), directory / "sphere.ply")
    entries = [ScanEntry(f"scan{i:03d}", Path("sphere.ply"), scanner_at((0.0, 0.0, 0.0))) for i in range(n_scans)]
    reg = directory / "registry.tsv"
    write_scan_registry(entries, reg)
    return reg
