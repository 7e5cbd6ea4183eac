from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class PointCloud:
    """Colored points in the world frame.

    ``xyz`` is Nx3 float32 or float64 (meters); ``rgb`` is Nx3 uint8.
    """

    xyz: np.ndarray
    rgb: np.ndarray
    scan_id: str = ""

    def __post_init__(self):
        xyz = np.asarray(self.xyz)
        rgb = np.asarray(self.rgb)
        if xyz.dtype not in (np.float32, np.float64):
            xyz = xyz.astype(np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be Nx3, got shape {xyz.shape}")
        if rgb.shape != xyz.shape:
            raise ValueError(f"rgb shape {rgb.shape} does not match xyz shape {xyz.shape}")
        if rgb.dtype != np.uint8:
            if rgb.size and (rgb.min() < 0 or rgb.max() > 255):
                raise ValueError("rgb values must lie in [0, 255]")
            rgb = rgb.astype(np.uint8)
        bad = ~np.isfinite(xyz).all(axis=1)
        if bad.any():
            raise ValueError(f"non-finite coordinates at point {int(np.argmax(bad))}")
        self.xyz = xyz
        self.rgb = rgb

    def __len__(self):
        return self.xyz.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.xyz.dtype == other.xyz.dtype
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.rgb, other.rgb)
        )

    def with_colors(self, rgb: np.ndarray) -> "PointCloud":
        return PointCloud(self.xyz, rgb, self.scan_id)
