import numpy as np
import pytest

from scanbench.fixtures import room_cloud, scanner_at, write_room_dataset
from scanbench.geometry import Pose, intrinsics_from_fov
from scanbench.render import RenderParams
from scanbench.synth import FlashlightParams, SamplingLimits, SynthConfig

ROOM_CENTER = (4.0, 3.0, 1.5)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, scale=5.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


@pytest.fixture(scope="session")
def room():
    return room_cloud(spacing=0.05, seed=0, scan_id="room")


@pytest.fixture(scope="session")
def small_intrinsics():
    return intrinsics_from_fov(60.0, 160, 120)


@pytest.fixture
def scanner():
    return scanner_at(ROOM_CENTER)


@pytest.fixture(scope="session")
def small_synth_config():
    """Reduced-resolution, distortion-free settings for quick pipeline runs."""
    return SynthConfig(
        width=160, height=120,
        render=RenderParams(),
        limits=SamplingLimits(max_horizontal_offset=1.0, max_vertical_offset=0.5),
        flashlight=FlashlightParams(enabled=False),
        occlusion_probability=0.0,
    )


@pytest.fixture(scope="session")
def room_registry(tmp_path_factory):
    return write_room_dataset(tmp_path_factory.mktemp("rooms"), n_scans=2, spacing=0.05)


# -- acceptance summary ------------------------------------------------------------
# Tests marked ``criterion(number, text)`` get one PASS/FAIL line each at the end
# of the run. Notes added with ``record_property("note", ...)`` are appended.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, text = mark.args
    failed = rep.failed or (rep.when == "setup" and rep.skipped)
    prev = _criteria.get(number)
    if rep.when == "call" or failed:
        notes = [v for k, v in rep.user_properties if k == "note"]
        status = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        _criteria[number] = (status, text, notes)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, text, notes = _criteria[number]
        line = f"criterion {number:2d}: {status}  {text}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)
