from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scanbench.geometry import Pose, orthonormality_error, orthonormalize

REGISTRY_ORTHO_TOL = 1e-6

_SCAN_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class ScanEntry:
    scan_id: str
    cloud_path: Path
    scanner_pose: Pose


@dataclass(frozen=True)
class ScanRegistry:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, scan_id: str) -> ScanEntry:
        for e in self.entries:
            if e.scan_id == scan_id:
                return e
        raise KeyError(scan_id)

    @property
    def scan_ids(self):
        return [e.scan_id for e in self.entries]


def validated_rotation(values, tol: float, what: str) -> np.ndarray:
    r = np.asarray(values, dtype=np.float64).reshape(3, 3)
    if not np.isfinite(r).all():
        raise ValueError(f"{what}: non-finite rotation")
    err = orthonormality_error(r)
    if err > tol:
        raise ValueError(f"{what}: rotation not orthonormal (error {err:.3g} > {tol:g})")
    return orthonormalize(r)


def load_scan_registry(path) -> ScanRegistry:
    """Parse a tab-separated registry; cloud paths resolve relative to the file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RegistryError(f"cannot read registry {path}: {exc}") from None
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise RegistryError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        scan_id, cloud, pose_txt = (f.strip() for f in fields)
        if not _SCAN_ID.match(scan_id):
            raise RegistryError(f"{path}:{lineno}: invalid scan_id {scan_id!r}")
        if scan_id in seen:
            raise RegistryError(f"{path}:{lineno}: duplicate scan_id {scan_id!r}")
        seen.add(scan_id)
        try:
            nums = [float(v) for v in pose_txt.split()]
        except ValueError:
            raise RegistryError(f"{path}:{lineno}: unreadable pose {pose_txt!r}") from None
        if len(nums) != 12:
            raise RegistryError(f"{path}:{lineno}: pose needs 12 numbers, got {len(nums)}")
        try:
            rot = validated_rotation(nums[:9], REGISTRY_ORTHO_TOL, f"{path}:{lineno}")
            pose = Pose(rot, nums[9:])
        except ValueError as exc:
            raise RegistryError(str(exc)) from None
        cloud_path = Path(cloud)
        if not cloud_path.is_absolute():
            cloud_path = path.parent / cloud_path
        if not cloud_path.is_file():
            raise RegistryError(f"{path}:{lineno}: cloud file not found: {cloud_path}")
        entries.append(ScanEntry(scan_id, cloud_path, pose))
    return ScanRegistry(tuple(entries))


def write_scan_registry(registry_or_entries, path) -> None:
    lines = ["# scan_id\tcloud_path\tr11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz"]
    for e in registry_or_entries:
        nums = list(e.scanner_pose.rotation.ravel()) + list(e.scanner_pose.translation)
        lines.append(f"{e.scan_id}\t{e.cloud_path}\t" + " ".join(repr(float(v)) for v in nums))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
