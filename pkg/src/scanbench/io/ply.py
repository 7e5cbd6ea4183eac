"""PLY reading (ascii, binary little endian) and writing (binary little endian)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scanbench.cloud import PointCloud

logger = logging.getLogger(__name__)

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, None) for lists

    @property
    def has_list(self):
        return any(dt is None for _, dt in self.props)

    def dtype(self, endian="<"):
        return np.dtype([(n, endian + dt) for n, dt in self.props])


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError("not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyError(f"unterminated header at byte {end}")
    body_offset = nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        where = offset
        offset += len(raw) + 1
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise PlyError(f"malformed format line at byte {where}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"malformed element line at byte {where}: {line!r}")
            elements.append(_Element(parts[1], int(parts[2])))
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"property before any element at byte {where}")
            if len(parts) == 5 and parts[1] == "list":
                elements[-1].props.append((parts[4], None))
            elif len(parts) == 3 and parts[1] in _TYPES:
                elements[-1].props.append((parts[2], _TYPES[parts[1]]))
            else:
                raise PlyError(f"malformed property line at byte {where}: {line!r}")
        else:
            raise PlyError(f"unknown header keyword at byte {where}: {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_offset


def _check_vertex(el: _Element):
    names = dict(el.props)
    for axis in "xyz":
        if names.get(axis) not in ("f4", "f8"):
            raise PlyError(f"vertex element needs float property {axis!r}")
    for ch in ("red", "green", "blue"):
        if names.get(ch) != "u1":
            raise PlyError(f"vertex element needs uint8 property {ch!r}")
    if el.has_list:
        raise PlyError("list properties are not supported on the vertex element")


def _read_binary(data: bytes, elements, offset: int, vertex: _Element) -> np.ndarray:
    for el in elements:
        if el is vertex:
            break
        if el.has_list:
            raise PlyError(f"cannot skip list-valued element {el.name!r} preceding vertex data")
        offset += el.count * el.dtype().itemsize
    dt = vertex.dtype("<")
    need = vertex.count * dt.itemsize
    have = len(data) - offset
    if have < need:
        raise PlyError(
            f"truncated vertex element: expected {need} bytes at byte offset {offset}, "
            f"found {max(have, 0)} ({max(have, 0) // dt.itemsize} of {vertex.count} vertices)"
        )
    return np.frombuffer(data, dtype=dt, count=vertex.count, offset=offset)


def _read_ascii(data: bytes, elements, offset: int, vertex: _Element) -> np.ndarray:
    lines = [ln for ln in data[offset:].split(b"\n") if ln.strip()]
    start = 0
    for el in elements:
        if el is vertex:
            break
        start += el.count
    rows = lines[start:start + vertex.count]
    if len(rows) < vertex.count:
        raise PlyError(
            f"truncated vertex element: declared {vertex.count} vertices, found {len(rows)}"
        )
    nprop = len(vertex.props)
    tokens = b" ".join(rows).split()
    if len(tokens) != nprop * vertex.count:
        for i, row in enumerate(rows):
            if len(row.split()) != nprop:
                raise PlyError(f"vertex {i}: expected {nprop} values, got {len(row.split())}")
    try:
        values = np.array(tokens, dtype=np.float64).reshape(vertex.count, nprop)
    except ValueError as exc:
        raise PlyError(f"non-numeric value in vertex element: {exc}") from None
    out = np.empty(vertex.count, dtype=vertex.dtype("<"))
    for j, (name, dt) in enumerate(vertex.props):
        col = values[:, j]
        if np.dtype(dt).kind in "iu":
            info = np.iinfo(dt)
            bad = (col != np.floor(col)) | (col < info.min) | (col > info.max)
            if bad.any():
                raise PlyError(f"vertex {int(np.argmax(bad))}: {name}={col[bad][0]} out of range for {dt}")
        out[name] = col
    return out


def load_ply(path) -> PointCloud:
    """Read a colored point cloud; the scan id defaults to the file stem."""
    path = Path(path)
    data = path.read_bytes()
    fmt, elements, offset = _parse_header(data)
    vertex = next((el for el in elements if el.name == "vertex"), None)
    if vertex is None:
        raise PlyError("no 'vertex' element in header")
    _check_vertex(vertex)
    if fmt == "ascii":
        arr = _read_ascii(data, elements, offset, vertex)
    else:
        arr = _read_binary(data, elements, offset, vertex)
    names = dict(vertex.props)
    coord_dt = np.float64 if "f8" in (names["x"], names["y"], names["z"]) else np.float32
    xyz = np.empty((vertex.count, 3), dtype=coord_dt)
    for j, axis in enumerate("xyz"):
        xyz[:, j] = arr[axis]
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        raise PlyError(f"vertex {int(np.argmax(bad))}: non-finite coordinate")
    rgb = np.stack([arr["red"], arr["green"], arr["blue"]], axis=1).astype(np.uint8)
    logger.debug("loaded %d points from %s", vertex.count, path)
    return PointCloud(xyz, rgb, scan_id=path.stem)


def save_ply(cloud: PointCloud, path) -> None:
    """Write binary little endian PLY with float32 coordinates."""
    n = len(cloud)
    if n == 0:
        raise ValueError("refusing to write an empty point cloud")
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    arr = np.empty(n, dtype=dt)
    for j, axis in enumerate("xyz"):
        arr[axis] = cloud.xyz[:, j]
    arr["red"], arr["green"], arr["blue"] = cloud.rgb[:, 0], cloud.rgb[:, 1], cloud.rgb[:, 2]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(arr.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
