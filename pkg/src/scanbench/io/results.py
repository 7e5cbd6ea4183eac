"""Localizer outputs: pose estimates and ranked retrieval candidates."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from scanbench.geometry import Pose
from scanbench.io.registry import validated_rotation

ESTIMATE_ORTHO_TOL = 1e-3
FAILED = "FAILED"

_IMAGE_ID = re.compile(r"^([A-Za-z0-9][A-Za-z0-9_.\-]*)_(\d{3})$")


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def database_image_id(scan_id: str, index: int) -> str:
    return f"{scan_id}_{index:03d}"


def scan_of_image(image_id: str) -> str:
    """Scan id encoded in a database image id ``<scan_id>_<nnn>``."""
    m = _IMAGE_ID.match(image_id)
    if m is None:
        raise ValueError(f"malformed database image id {image_id!r}")
    return m.group(1)


def _records(path):
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield lineno, line.split()


def read_estimates(path) -> list[tuple[str, Pose | None]]:
    """``(query_id, pose)`` pairs in file order; ``None`` marks a FAILED query."""
    out, seen = [], set()
    for lineno, parts in _records(path):
        qid = parts[0]
        if qid in seen:
            raise ParseError(path, lineno, f"duplicate query_id {qid!r}")
        seen.add(qid)
        if len(parts) == 2 and parts[1] == FAILED:
            out.append((qid, None))
            continue
        if len(parts) != 13:
            raise ParseError(path, lineno, f"expected query_id and 12 numbers, got {len(parts) - 1} values")
        try:
            nums = [float(v) for v in parts[1:]]
        except ValueError:
            raise ParseError(path, lineno, "non-numeric pose value") from None
        try:
            m = np.array(nums).reshape(3, 4)  # row-major [R|t]
            rot = validated_rotation(m[:, :3], ESTIMATE_ORTHO_TOL, qid)
            out.append((qid, Pose(rot, m[:, 3])))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out


def write_estimates(estimates, path) -> None:
    lines = []
    for qid, pose in estimates:
        if pose is None:
            lines.append(f"{qid} {FAILED}")
        else:
            lines.append(qid + " " + " ".join(repr(float(v)) for v in pose.matrix().ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_candidates(path) -> list[tuple[str, list[str]]]:
    out, seen = [], set()
    for lineno, parts in _records(path):
        qid, ids = parts[0], parts[1:]
        if qid in seen:
            raise ParseError(path, lineno, f"duplicate query_id {qid!r}")
        seen.add(qid)
        if not ids:
            raise ParseError(path, lineno, "no candidates listed")
        for image_id in ids:
            if _IMAGE_ID.match(image_id) is None:
                raise ParseError(path, lineno, f"malformed database image id {image_id!r}")
        out.append((qid, ids))
    return out


def write_candidates(candidates, path) -> None:
    Path(path).write_text("".join(f"{q} {' '.join(ids)}\n" for q, ids in candidates), encoding="utf-8")
