"""Query manifest: the exact ground-truth record for a synthesized query set.

One header line followed by one whitespace-separated ``key=value`` record per
query. Poses are written as 12 comma-separated numbers (row-major ``[R|t]``,
camera-from-world) in shortest round-trip float form, so a parsed pose is
bit-identical to the pose the query was rendered from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scanbench.geometry import Pose

MANIFEST_HEADER = "TBPOS-MANIFEST v1"
OCCLUSION_RANGE = (0.01, 0.50)


class ManifestError(ValueError):
    pass


@dataclass
class QueryRecord:
    query_id: str
    scan_id: str
    seed: int
    pose: Pose | None = None
    status: str = "ok"
    attempts: int = 0
    missing_fraction: float | None = None
    flashlight: bool = False
    flash_gain: float | None = None
    flash_half_distance: float | None = None
    occlusion: bool = False
    occlusion_vertices: tuple = ()
    occlusion_rgb: tuple = ()
    occlusion_fraction: float | None = None
    noise_sigma: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class QueryManifest:
    records: list = field(default_factory=list)

    def __post_init__(self):
        ids = [r.query_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ManifestError(f"duplicate query_id {dup!r}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def queries(self) -> list:
        """Records that produced an image (skipped ones excluded)."""
        return [r for r in self.records if r.ok]

    def by_id(self) -> dict:
        return {r.query_id: r for r in self.records}

    def check_scans(self, scan_ids) -> None:
        known = set(scan_ids)
        for r in self.records:
            if r.scan_id not in known:
                raise ManifestError(f"{r.query_id}: unknown scan_id {r.scan_id!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


def _csv(values) -> str:
    return ",".join(_fmt(v) for v in values)


def format_record(rec: QueryRecord) -> str:
    parts = [f"query_id={rec.query_id}", f"scan_id={rec.scan_id}",
             f"status={rec.status}", f"seed={rec.seed}", f"attempts={rec.attempts}"]
    if rec.pose is not None:
        parts.append("pose=" + _csv(rec.pose.matrix().ravel()))
    if rec.missing_fraction is not None:
        parts.append(f"missing={_fmt(rec.missing_fraction)}")
    parts.append(f"flashlight={'on' if rec.flashlight else 'off'}")
    if rec.flashlight:
        parts.append(f"flash_gain={_fmt(rec.flash_gain)}")
        parts.append(f"flash_d0={_fmt(rec.flash_half_distance)}")
    parts.append(f"occlusion={'on' if rec.occlusion else 'off'}")
    if rec.occlusion:
        parts.append("occ_poly=" + _csv(rec.occlusion_vertices))
        parts.append("occ_rgb=" + ",".join(str(int(c)) for c in rec.occlusion_rgb))
        parts.append(f"occ_fraction={_fmt(rec.occlusion_fraction)}")
    parts.append(f"noise_sigma={_fmt(rec.noise_sigma)}")
    return " ".join(parts)


def _flag(value: str, key: str) -> bool:
    if value not in ("on", "off"):
        raise ValueError(f"{key} must be on/off, got {value!r}")
    return value == "on"


def _floats(value: str, n: int, key: str) -> list:
    vals = [float(v) for v in value.split(",")]
    if len(vals) != n:
        raise ValueError(f"{key} needs {n} numbers, got {len(vals)}")
    return vals


def parse_record(line: str) -> QueryRecord:
    kv = {}
    for tok in line.split():
        key, sep, value = tok.partition("=")
        if not sep or not value:
            raise ValueError(f"malformed field {tok!r}")
        if key in kv:
            raise ValueError(f"repeated key {key!r}")
        kv[key] = value
    for req in ("query_id", "scan_id", "status", "seed"):
        if req not in kv:
            raise ValueError(f"missing field {req!r}")
    rec = QueryRecord(kv.pop("query_id"), kv.pop("scan_id"), int(kv.pop("seed")))
    rec.status = kv.pop("status")
    if rec.status not in ("ok", "skipped"):
        raise ValueError(f"unknown status {rec.status!r}")
    rec.attempts = int(kv.pop("attempts", "0"))
    if "pose" in kv:
        rec.pose = Pose.from_matrix(np.array(_floats(kv.pop("pose"), 12, "pose")).reshape(3, 4))
    elif rec.ok:
        raise ValueError("record with status=ok lacks a pose")
    if "missing" in kv:
        rec.missing_fraction = float(kv.pop("missing"))
    rec.flashlight = _flag(kv.pop("flashlight", "off"), "flashlight")
    if rec.flashlight:
        rec.flash_gain = float(kv.pop("flash_gain"))
        rec.flash_half_distance = float(kv.pop("flash_d0"))
    rec.occlusion = _flag(kv.pop("occlusion", "off"), "occlusion")
    if rec.occlusion:
        rec.occlusion_vertices = tuple(_floats(kv.pop("occ_poly"), 8, "occ_poly"))
        rgb = tuple(int(v) for v in kv.pop("occ_rgb").split(","))
        if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
            raise ValueError(f"occ_rgb must be 3 values in [0, 255], got {rgb}")
        rec.occlusion_rgb = rgb
        rec.occlusion_fraction = float(kv.pop("occ_fraction"))
        lo, hi = OCCLUSION_RANGE
        if not lo <= rec.occlusion_fraction <= hi:
            raise ValueError(f"occ_fraction {rec.occlusion_fraction} outside [{lo}, {hi}]")
    rec.noise_sigma = float(kv.pop("noise_sigma", "0"))
    if kv:
        raise ValueError(f"unknown fields {sorted(kv)}")
    return rec


def format_manifest(manifest: QueryManifest) -> str:
    return "\n".join([MANIFEST_HEADER] + [format_record(r) for r in manifest]) + "\n"


def write_manifest(manifest: QueryManifest, path) -> None:
    Path(path).write_text(format_manifest(manifest), encoding="utf-8")


def read_manifest(path) -> QueryManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: missing header {MANIFEST_HEADER!r}")
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            records.append(parse_record(line))
        except (ValueError, KeyError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return QueryManifest(records)
