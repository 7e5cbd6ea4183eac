"""Rigid poses, pinhole intrinsics and pose-error metrics.

Pose convention is camera-from-world: ``X_cam = R @ X_world + t``. The world
frame is right-handed with Z up; the camera frame has +Z along the optical
axis, +X right and +Y down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9

# Camera-from-world rotation of the zero-angle orientation: optical axis along
# world +X, image right along world -Y, image down along world -Z.
_BASE_ROTATION = np.array(
    [
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0],
    ]
)


def _rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation (polar factor) of a 3x3 matrix."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def orthonormality_error(rotation: np.ndarray) -> float:
    """Max entry deviation of R^T R from I, combined with |det R - 1|."""
    r = np.asarray(rotation, dtype=np.float64)
    gram = np.abs(r.T @ r - np.eye(3)).max()
    return float(max(gram, abs(np.linalg.det(r) - 1.0)))


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-from-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("pose contains non-finite values")
        if orthonormality_error(r) > ORTHO_TOL:
            raise ValueError(
                f"rotation is not orthonormal (error {orthonormality_error(r):.3g})"
            )
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, rotation: np.ndarray, center: np.ndarray) -> "Pose":
        """Build a pose from its rotation and camera center in world coordinates."""
        r = np.asarray(rotation, dtype=np.float64)
        return cls(r, -r @ np.asarray(center, dtype=np.float64))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def matrix(self) -> np.ndarray:
        """3x4 ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map Nx3 world points into the camera frame.

        Written elementwise (not as a matmul) so each point's result is
        independent of how many points are transformed together.
        """
        p = np.asarray(points, dtype=np.float64)
        shape = p.shape
        p = p.reshape(-1, 3)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        r, t = self.rotation, self.translation
        out = np.empty((3, len(p)))
        tmp = np.empty(len(p))
        for i in range(3):
            # in place, same evaluation order as r0*x + r1*y + r2*z + t
            o = out[i]
            np.multiply(x, r[i, 0], out=o)
            o += np.multiply(y, r[i, 1], out=tmp)
            o += np.multiply(z, r[i, 2], out=tmp)
            o += t[i]
        return out.T.reshape(shape)

    def compose(self, other: "Pose") -> "Pose":
        """``self`` after ``other``: maps X to self(other(X))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with square pixels and the principal point at the image center."""

    focal_px: float
    width: int
    height: int

    def __post_init__(self):
        if not (math.isfinite(self.focal_px) and self.focal_px > 0):
            raise ValueError(f"focal length must be positive, got {self.focal_px}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("resolution must be integral")
        if self.width < 2 or self.height < 2:
            raise ValueError(f"degenerate resolution {self.width}x{self.height}")
        object.__setattr__(self, "focal_px", float(self.focal_px))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def hfov(self) -> float:
        """Horizontal field of view in degrees."""
        return math.degrees(2.0 * math.atan((self.width / 2.0) / self.focal_px))

    @property
    def vfov(self) -> float:
        return math.degrees(2.0 * math.atan((self.height / 2.0) / self.focal_px))

    def K(self) -> np.ndarray:
        f = self.focal_px
        return np.array([[f, 0.0, self.cx], [0.0, f, self.cy], [0.0, 0.0, 1.0]])


def intrinsics_from_fov(hfov: float, width: int, height: int) -> CameraIntrinsics:
    """Intrinsics whose horizontal field of view is ``hfov`` degrees.

    >>> round(intrinsics_from_fov(90, 1024, 768).focal_px, 6)
    512.0
    """
    if not (0.0 < hfov < 180.0):
        raise ValueError(f"hfov must lie in (0, 180) degrees, got {hfov}")
    if width < 2 or height < 2:
        raise ValueError(f"degenerate resolution {width}x{height}")
    focal = (width / 2.0) / math.tan(math.radians(hfov) / 2.0)
    return CameraIntrinsics(focal, width, height)


@dataclass(frozen=True)
class EulerAngles:
    """Yaw about world Z, then pitch about camera X, then roll about camera Z (degrees).

    Positive pitch tilts the optical axis upward.
    """

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0


def rotation_from_euler(angles: EulerAngles) -> np.ndarray:
    """Camera-from-world rotation for the given angles."""
    if not (-90.0 < angles.pitch < 90.0):
        raise ValueError(f"pitch must lie in (-90, 90) degrees, got {angles.pitch}")
    world_from_cam = _rot_z(angles.yaw) @ _BASE_ROTATION.T @ _rot_x(angles.pitch) @ _rot_z(angles.roll)
    return world_from_cam.T


def euler_from_rotation(rotation: np.ndarray) -> EulerAngles:
    """Inverse of :func:`rotation_from_euler`; yaw and roll in (-180, 180]."""
    world_from_cam = np.asarray(rotation, dtype=np.float64).T
    axis = world_from_cam[:, 2]
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, axis[2]))))
    if abs(abs(pitch) - 90.0) < 1e-9:
        raise ValueError("orientation is gimbal-degenerate (optical axis vertical)")
    yaw = math.degrees(math.atan2(axis[1], axis[0]))
    rest = (_rot_z(yaw) @ _BASE_ROTATION.T @ _rot_x(pitch)).T @ world_from_cam
    roll = math.degrees(math.atan2(rest[1, 0], rest[0, 0]))
    return EulerAngles(yaw, pitch, roll)


def pose_from_euler(position, angles: EulerAngles) -> Pose:
    """Pose with camera center ``position`` (world, meters) and the given orientation."""
    return Pose.from_center(rotation_from_euler(angles), np.asarray(position, dtype=np.float64))


def translation_error(gt: Pose, est: Pose) -> float:
    """Distance in meters between the two camera centers."""
    return float(np.linalg.norm(gt.center - est.center))


def relative_angle(rel: np.ndarray) -> float:
    """Rotation angle in degrees of a 3x3 rotation matrix.

    The cosine comes from the clamped trace; the sine from the skew part, so
    the angle is accurate near 0 and 180 degrees and exactly zero for a
    symmetric (identity) input.
    """
    cos = min(1.0, max(-1.0, (rel[0, 0] + rel[1, 1] + rel[2, 2] - 1.0) / 2.0))
    skew = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    sin = min(1.0, 0.5 * math.sqrt(float(skew @ skew)))
    return math.degrees(math.atan2(sin, cos))


def rotation_error(gt: Pose, est: Pose) -> float:
    """Angle in degrees of the relative rotation ``R_gt @ R_est.T``."""
    return relative_angle(gt.rotation @ est.rotation.T)


# -- pose text format -------------------------------------------------------

POSE_MARKER = "CFW"


def format_pose(pose: Pose) -> str:
    lines = [POSE_MARKER]
    for row in pose.matrix():
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_pose(text: str) -> Pose:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 4 or lines[0].strip() != POSE_MARKER:
        raise ValueError(f"pose text must be '{POSE_MARKER}' followed by 3 matrix rows")
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise ValueError(f"pose row needs 4 numbers: {ln!r}")
        rows.append([float(p) for p in parts])
    return Pose.from_matrix(np.array(rows))
