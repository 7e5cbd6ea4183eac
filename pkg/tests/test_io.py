import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scanbench.geometry import CameraIntrinsics, Pose, format_pose, intrinsics_from_fov
from scanbench.io.manifest import (
    MANIFEST_HEADER,
    ManifestError,
    QueryManifest,
    QueryRecord,
    format_record,
    parse_record,
    read_manifest,
    write_manifest,
)
from scanbench.io.ply import save_ply
from scanbench.io.registry import RegistryError, ScanEntry, load_scan_registry, write_scan_registry
from scanbench.io.results import (
    ParseError,
    database_image_id,
    read_candidates,
    read_estimates,
    scan_of_image,
    write_candidates,
    write_estimates,
)
from scanbench.io.rgbd import RgbdImage, quantize_depth, read_rgbd, write_rgbd
from scanbench.fixtures import room_cloud

from conftest import random_pose, random_rotation

IDENTITY_POSE = "1 0 0 0 1 0 0 0 1 0 0 0"  # registry layout: R then t
IDENTITY_RT = "1 0 0 0 0 1 0 0 0 0 1 0"  # estimates layout: row-major [R|t]


@pytest.fixture
def cloud_file(tmp_path):
    path = tmp_path / "a.ply"
    save_ply(room_cloud(size=(2, 2, 2), spacing=0.5), path)
    return path


# -- registry --------------------------------------------------------------

def test_registry_two_identity_scans(tmp_path, cloud_file):
    reg = tmp_path / "reg.tsv"
    reg.write_text(f"# comment\ns1\ta.ply\t{IDENTITY_POSE}\n\ns2\t{cloud_file}\t{IDENTITY_POSE}\n")
    r = load_scan_registry(reg)
    assert r.scan_ids == ["s1", "s2"]
    for e in r:
        assert e.scanner_pose == Pose.identity()
        assert e.cloud_path == cloud_file


def test_registry_missing_cloud_names_path(tmp_path):
    reg = tmp_path / "reg.tsv"
    reg.write_text(f"s1\tnope/missing.ply\t{IDENTITY_POSE}\n")
    with pytest.raises(RegistryError, match="missing.ply"):
        load_scan_registry(reg)


def test_registry_scaled_rotation_rejected(tmp_path, cloud_file):
    r = random_rotation(np.random.default_rng(3)) * 1.1
    nums = " ".join(repr(v) for v in r.ravel().tolist() + [0.0, 0.0, 0.0])
    reg = tmp_path / "reg.tsv"
    reg.write_text(f"s1\ta.ply\t{nums}\n")
    with pytest.raises(RegistryError, match="orthonormal"):
        load_scan_registry(reg)


@pytest.mark.parametrize("line", [
    "s1\ta.ply",
    f"s1\ta.ply\t{IDENTITY_POSE} 5",
    "s1\ta.ply\t1 0 0 0 1 0 0 0 x 0 0 0",
    f"bad id\ta.ply\t{IDENTITY_POSE}",
])
def test_registry_malformed_lines(tmp_path, cloud_file, line):
    reg = tmp_path / "reg.tsv"
    reg.write_text(line + "\n")
    with pytest.raises(RegistryError, match=":1:"):
        load_scan_registry(reg)


def test_registry_duplicate_id(tmp_path, cloud_file):
    reg = tmp_path / "reg.tsv"
    reg.write_text(f"s1\ta.ply\t{IDENTITY_POSE}\ns1\ta.ply\t{IDENTITY_POSE}\n")
    with pytest.raises(RegistryError, match="duplicate"):
        load_scan_registry(reg)


def test_registry_round_trip(tmp_path, cloud_file):
    rng = np.random.default_rng(5)
    entries = [ScanEntry(f"s{i}", cloud_file, random_pose(rng)) for i in range(4)]
    write_scan_registry(entries, tmp_path / "r.tsv")
    back = load_scan_registry(tmp_path / "r.tsv")
    for a, b in zip(entries, back):
        assert a.scan_id == b.scan_id
        assert np.abs(a.scanner_pose.matrix() - b.scanner_pose.matrix()).max() < 1e-12


# -- rgbd ------------------------------------------------------------------

def _image(depth, rng=None, image_id="img"):
    h, w = depth.shape
    rng = rng or np.random.default_rng(0)
    intr = CameraIntrinsics(123.456789, w, h)
    return RgbdImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), depth, depth > 0,
                     random_pose(rng), intr, image_id)


def test_depth_unit_conversion():
    mm, sat = quantize_depth(np.full((4, 5), 2.0))
    assert mm.dtype == np.uint16 and (mm == 2000).all() and sat == 0


def test_depth_saturation(tmp_path, caplog):
    mm, sat = quantize_depth(np.array([65.535, 70.0]))
    assert mm.tolist() == [65535, 65535] and sat == 1
    img = _image(np.array([[65.535, 70.0], [1.0, 0.0]]))
    with caplog.at_level(logging.WARNING):
        assert write_rgbd(img, tmp_path) == 1
    assert "saturated" in caplog.text
    assert read_rgbd(tmp_path, "img").depth[0].tolist() == [65.535, 65.535]


def test_rgbd_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.1, 60.0, (30, 40))
    depth[rng.random(depth.shape) < 0.2] = 0.0
    img = _image(depth, rng)
    assert write_rgbd(img, tmp_path / "out") == 0
    back = read_rgbd(tmp_path / "out", "img")
    assert np.array_equal(back.rgb, img.rgb)
    assert np.abs(back.depth - depth).max() <= 0.0005 + 1e-12
    assert np.array_equal(back.valid_mask, img.valid_mask)
    assert back.pose == img.pose
    assert back.intrinsics == img.intrinsics
    assert (tmp_path / "out" / "img.pose.txt").read_text() == format_pose(img.pose)


def test_rgbd_invariants():
    intr = intrinsics_from_fov(60, 4, 3)
    rgb = np.zeros((3, 4, 3), np.uint8)
    with pytest.raises(ValueError):
        RgbdImage(rgb, np.zeros((3, 4)), np.ones((3, 4), bool), Pose.identity(), intr)
    with pytest.raises(ValueError):
        RgbdImage(rgb, -np.ones((3, 4)), np.zeros((3, 4), bool), Pose.identity(), intr)
    with pytest.raises(ValueError):
        RgbdImage(rgb[:2], np.ones((3, 4)), np.ones((3, 4), bool), Pose.identity(), intr)


def test_read_rgbd_missing(tmp_path):
    with pytest.raises(OSError):
        read_rgbd(tmp_path, "none")


# -- estimates and candidates ----------------------------------------------

def test_estimates_failed_marker(tmp_path):
    p = tmp_path / "est.txt"
    p.write_text(f"q1 {IDENTITY_RT}\nq7 FAILED\n")
    est = read_estimates(p)
    assert est[0][0] == "q1" and est[0][1] == Pose.identity()
    assert est[1] == ("q7", None)


def test_estimates_reorthonormalized(tmp_path):
    r = random_rotation(np.random.default_rng(0))
    nums = np.hstack([r + 2e-4, [[1.0], [2.0], [3.0]]]).ravel().tolist()
    p = tmp_path / "est.txt"
    p.write_text("q0 " + " ".join(map(repr, nums)) + "\n")
    pose = read_estimates(p)[0][1]
    assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-12
    p.write_text("q0 " + " ".join(map(repr, np.hstack([r * 1.01, np.zeros((3, 1))]).ravel().tolist())) + "\n")
    with pytest.raises(ParseError, match="orthonormal"):
        read_estimates(p)


@pytest.mark.parametrize("body,lineno", [
    (f"q1 {IDENTITY_RT}\nq2 1 2 3 4 5 6 7 8 9 10 11\n", 2),
    ("q1 1 0 0 0 0 1 0 0 0 0 1 zero\n", 1),
    (f"q1 {IDENTITY_RT}\nq1 FAILED\n", 2),
    ("q1 nan 0 0 0 0 1 0 0 0 0 1 0\n", 1),
])
def test_estimates_malformed(tmp_path, body, lineno):
    p = tmp_path / "est.txt"
    p.write_text(body)
    with pytest.raises(ParseError) as exc:
        read_estimates(p)
    assert exc.value.lineno == lineno


def test_estimates_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    est = [(f"q{i:03d}", random_pose(rng) if i % 3 else None) for i in range(20)]
    write_estimates(est, tmp_path / "e.txt")
    back = read_estimates(tmp_path / "e.txt")
    for (qa, pa), (qb, pb) in zip(est, back):
        assert qa == qb
        if pa is None:
            assert pb is None
        else:
            assert np.abs(pa.matrix() - pb.matrix()).max() < 1e-12


def test_candidates(tmp_path):
    cands = [("q000", ["scanA_000", "scanB_035"]), ("q001", ["x.y-z_001"])]
    write_candidates(cands, tmp_path / "c.txt")
    assert read_candidates(tmp_path / "c.txt") == cands
    assert scan_of_image("x.y-z_001") == "x.y-z"
    assert database_image_id("scan7", 5) == "scan7_005"
    (tmp_path / "bad.txt").write_text("q0 scanA_1\n")
    with pytest.raises(ParseError):
        read_candidates(tmp_path / "bad.txt")


# -- manifest --------------------------------------------------------------

def _record(i, rng, occluded=True):
    rec = QueryRecord(f"q{i:03d}", "scan000", int(rng.integers(0, 2**63)), random_pose(rng),
                      attempts=int(rng.integers(1, 5)), missing_fraction=float(rng.random() * 0.1))
    rec.flashlight = True
    rec.flash_gain, rec.flash_half_distance = 4.0, 3.0
    if occluded:
        rec.occlusion = True
        rec.occlusion_vertices = tuple(float(v) for v in rng.uniform(-10, 500, 8))
        rec.occlusion_rgb = (10, 33, 60)
        rec.occlusion_fraction = float(rng.uniform(0.01, 0.5))
    rec.noise_sigma = 2.5
    return rec


def test_manifest_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    recs = [_record(i, rng, occluded=i % 2 == 0) for i in range(10)]
    recs.append(QueryRecord("q010", "scan001", 5, status="skipped", attempts=50))
    m = QueryManifest(recs)
    write_manifest(m, tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == MANIFEST_HEADER
    back = read_manifest(tmp_path / "m.txt")
    assert len(back) == 11 and len(back.queries) == 10
    for a, b in zip(recs, back):
        assert format_record(a) == format_record(b)
        if a.pose is not None:
            assert a.pose == b.pose


def test_manifest_duplicate_ids():
    rng = np.random.default_rng(0)
    with pytest.raises(ManifestError, match="duplicate"):
        QueryManifest([_record(1, rng), _record(1, rng)])


def test_manifest_unknown_scan():
    m = QueryManifest([_record(0, np.random.default_rng(0))])
    m.check_scans(["scan000"])
    with pytest.raises(ManifestError, match="unknown scan"):
        m.check_scans(["other"])


@pytest.mark.parametrize("mutate", [
    lambda s: s.replace("occ_fraction=", "occ_fraction=0.9 x="),
    lambda s: s.replace("status=ok", "status=maybe"),
    lambda s: s.replace("occ_rgb=10,33,60", "occ_rgb=10,33,300"),
    lambda s: s + " extra=1",
    lambda s: s.replace("pose=", "pose=1,"),
])
def test_manifest_bad_records(tmp_path, mutate):
    line = format_record(_record(0, np.random.default_rng(0)))
    (tmp_path / "m.txt").write_text(MANIFEST_HEADER + "\n" + mutate(line) + "\n")
    with pytest.raises(ManifestError, match=":2:"):
        read_manifest(tmp_path / "m.txt")


def test_manifest_occlusion_fraction_out_of_range():
    rec = _record(0, np.random.default_rng(0))
    rec.occlusion_fraction = 0.6
    with pytest.raises(ValueError, match="outside"):
        parse_record(format_record(rec))


def test_manifest_missing_header(tmp_path):
    (tmp_path / "m.txt").write_text("query_id=q0\n")
    with pytest.raises(ManifestError, match="header"):
        read_manifest(tmp_path / "m.txt")


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=200))
def test_parsers_fuzz(tmp_path_factory, text):
    d = tmp_path_factory.mktemp("fz")
    (d / "f.txt").write_text(MANIFEST_HEADER + "\n" + text, encoding="utf-8")
    for reader, errors in ((read_manifest, ManifestError), (read_estimates, ParseError),
                           (read_candidates, ParseError)):
        try:
            reader(d / "f.txt")
        except errors:
            pass
