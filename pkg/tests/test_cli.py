import hashlib
import subprocess
import sys
from pathlib import Path

import pytest

from scanbench.cli import build_parser, dataset_stats, main
from scanbench.config import ConfigError, RunConfig
from scanbench.io.manifest import read_manifest
from scanbench.io.results import write_candidates, write_estimates

SMALL = ["--set", "width=160", "--set", "height=120"]


def digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(room_registry, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["slice-db", str(room_registry), str(out)] + SMALL) == 0
    assert main(["synth-queries", str(room_registry), str(out), "-n", "10", "--seed", "5"] + SMALL) == 0
    return out


# -- config ------------------------------------------------------------------

def test_config_defaults_and_overrides(tmp_path):
    cfg = RunConfig()
    assert cfg["num_queries"] == 338 and cfg["pitch_ring"] == (-30.0, 0.0, 30.0)
    (tmp_path / "c.txt").write_text("# comment\nnoise_sigma = 2.5\npitch_ring = -20, 0, 20\nseed = 0x10\n")
    cfg = RunConfig.from_file(tmp_path / "c.txt")
    assert cfg["noise_sigma"] == 2.5 and cfg["pitch_ring"] == (-20.0, 0.0, 20.0) and cfg["seed"] == 16
    assert cfg.slice_config().images_per_scan == 36
    echo = RunConfig()
    echo.update_from_text(cfg.echo())
    assert echo.echo() == cfg.echo()
    assert "workers" not in cfg.echo()


@pytest.mark.parametrize("text,match", [
    ("bogus = 1\n", "unknown config key"),
    ("width\n", "key = value"),
    ("seed = -1\n", "seed"),
    ("flashlight_enabled = maybe\n", "boolean"),
    ("yaw_range = 1 2 3\n", "two numbers"),
])
def test_config_rejects(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig().update_from_text(text)


def test_config_typed_view_errors():
    cfg = RunConfig()
    cfg.set("splat_radius", "9")
    with pytest.raises(ConfigError, match="splat_radius"):
        cfg.slice_config()


# -- help and flags --------------------------------------------------------------

@pytest.mark.parametrize("cmd", ["slice-db", "synth-queries", "evaluate", "stats"])
def test_help_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--workers", "--force"):
        assert flag in out


def test_global_flags_either_side():
    p = build_parser()
    a = p.parse_args(["--seed", "4", "stats", "x"])
    b = p.parse_args(["stats", "x", "--seed", "4"])
    assert a.seed == b.seed == "4"


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "scanbench.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "slice-db" in res.stdout


# -- slice-db / synth-queries / stats --------------------------------------------

def test_slice_db_layout(dataset, capsys):
    scans = sorted(d.name for d in (dataset / "database").iterdir() if d.is_dir())
    assert scans == ["scan000", "scan001"]
    assert len(list((dataset / "database").rglob("*.rgb.png"))) == 72
    assert len(list((dataset / "database").rglob("*.depth.png"))) == 72
    assert (dataset / "database" / "scan001" / "scan001_035.pose.txt").is_file()
    assert "width = 160" in (dataset / "database" / "config.txt").read_text()


def test_slice_db_refuses_then_forces(dataset, room_registry, tmp_path, capsys):
    before = digest(dataset / "database")
    assert main(["slice-db", str(room_registry), str(dataset)] + SMALL) == 3
    assert "--force" in capsys.readouterr().err
    assert digest(dataset / "database") == before
    out = tmp_path / "again"
    assert main(["slice-db", str(room_registry), str(out)] + SMALL) == 0
    assert main(["slice-db", str(room_registry), str(out), "--force"] + SMALL) == 0
    assert digest(out / "database") == before


def test_slice_db_empty_registry(tmp_path, capsys):
    (tmp_path / "r.tsv").write_text("# nothing\n")
    assert main(["slice-db", str(tmp_path / "r.tsv"), str(tmp_path / "o")]) == 2
    assert "no scans" in capsys.readouterr().err


def test_bad_registry(tmp_path, capsys):
    assert main(["slice-db", str(tmp_path / "missing.tsv"), str(tmp_path / "o")]) == 2
    assert "cannot read registry" in capsys.readouterr().err


def test_synth_outputs(dataset):
    m = read_manifest(dataset / "manifest.txt")
    assert len(m) == 10 and [r.query_id for r in m] == [f"q{i:03d}" for i in range(10)]
    assert len(list((dataset / "queries").glob("*.rgb.png"))) == len(m.queries)
    assert "seed = 5" in (dataset / "queries" / "config.txt").read_text()


def test_synth_same_seed_identical(room_registry, dataset, tmp_path):
    args = ["synth-queries", str(room_registry), str(tmp_path), "-n", "10", "--seed", "5"] + SMALL
    assert main(args + ["--workers", "3"]) == 0
    a = tmp_path / "a"
    a.mkdir()
    for name in ("queries", "manifest.txt"):
        (tmp_path / name).rename(a / name)
    assert digest(a / "queries") == digest(dataset / "queries")
    assert (a / "manifest.txt").read_bytes() == (dataset / "manifest.txt").read_bytes()


def test_synth_zero_queries(room_registry, tmp_path, capsys):
    assert main(["synth-queries", str(room_registry), str(tmp_path), "-n", "0"]) == 2
    assert "positive" in capsys.readouterr().err


def test_synth_refuses_overwrite(room_registry, dataset):
    assert main(["synth-queries", str(room_registry), str(dataset), "-n", "2"] + SMALL) == 3


def test_stats(dataset, tmp_path, capsys):
    assert dataset_stats(dataset) == (2, 72, 10)
    assert main(["stats", str(dataset)]) == 0
    row = capsys.readouterr().out.splitlines()[1].split()
    assert row[1:4] == ["2", "72", "10"]
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["stats", str(empty)]) == 0
    assert capsys.readouterr().out.splitlines()[1].split()[1:4] == ["0", "0", "n/a"]
    assert main(["stats", str(tmp_path / "nope")]) == 2


# -- evaluate ----------------------------------------------------------------------

def test_evaluate_ground_truth(dataset, tmp_path, capsys):
    m = read_manifest(dataset / "manifest.txt")
    write_estimates([(r.query_id, r.pose) for r in m.queries], tmp_path / "est.txt")
    write_candidates([(r.query_id, [f"{r.scan_id}_000"]) for r in m.queries], tmp_path / "cand.txt")
    assert main(["evaluate", str(dataset / "manifest.txt"), str(tmp_path / "est.txt"),
                 "--candidates", str(tmp_path / "cand.txt")]) == 0
    out = capsys.readouterr().out
    success = next(line for line in out.splitlines() if line.startswith("success"))
    assert success.split()[1:] == ["100.0%"] * 4
    assert "Top10" in out
    for name in ("report.txt", "summary.txt", "per_query.csv", "config.txt"):
        assert (tmp_path / "report" / name).is_file()
    assert main(["evaluate", str(dataset / "manifest.txt"), str(tmp_path / "est.txt")]) == 3
    assert main(["evaluate", str(dataset / "manifest.txt"), str(tmp_path / "est.txt"), "--force"]) == 0
    assert "Top10" not in capsys.readouterr().out


def test_evaluate_bad_line(dataset, tmp_path, capsys):
    m = read_manifest(dataset / "manifest.txt")
    q = m.queries[0]
    body = q.query_id + " " + " ".join(repr(float(v)) for v in q.pose.matrix().ravel()) + "\n"
    body += m.queries[1].query_id + " 1 2 3 4 5 6 7 8 9 10 11\n"
    (tmp_path / "est.txt").write_text(body)
    assert main(["evaluate", str(dataset / "manifest.txt"), str(tmp_path / "est.txt")]) == 2
    assert "est.txt:2:" in capsys.readouterr().err


def test_evaluate_unknown_query(dataset, tmp_path):
    (tmp_path / "est.txt").write_text("nope FAILED\n")
    assert main(["evaluate", str(dataset / "manifest.txt"), str(tmp_path / "est.txt")]) == 2


def test_internal_error_exit_code(monkeypatch, tmp_path, capsys):
    import scanbench.cli as cli

    def boom(args, cfg):
        raise RuntimeError("boom")
    monkeypatch.setitem(cli.COMMANDS, "stats", boom)
    assert main(["stats", str(tmp_path)]) == 4
    assert "internal error" in capsys.readouterr().err


def test_bad_config_flag(tmp_path, capsys):
    assert main(["stats", str(tmp_path), "--set", "nonsense"]) == 2
    assert main(["stats", str(tmp_path), "--config", str(tmp_path / "missing.txt")]) == 2
