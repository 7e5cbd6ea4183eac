"""Command line entry point.

Exit codes: 0 ok, 2 input error, 3 refused overwrite, 4 internal error.
Log verbosity comes from the ``TBPOS_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from scanbench.config import ConfigError, RunConfig
from scanbench.evaluate import (
    EvaluationError,
    attach_retrieval,
    evaluate_poses,
    format_table,
    write_report,
)
from scanbench.io.manifest import ManifestError, read_manifest
from scanbench.io.ply import PlyError, load_ply
from scanbench.io.registry import RegistryError, load_scan_registry
from scanbench.io.results import ParseError, read_candidates, read_estimates
from scanbench.io.rgbd import write_rgbd
from scanbench.slicer import slice_scan
from scanbench.synth import synthesize_queries

logger = logging.getLogger("scanbench")

EXIT_OK, EXIT_INPUT, EXIT_REFUSED, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    pass


class Refused(Exception):
    pass


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default,
                        help="key = value configuration file")
    parser.add_argument("--seed", metavar="U64", default=default,
                        help="master seed (overrides the config file)")
    parser.add_argument("--workers", type=int, metavar="N", default=default,
                        help="parallel workers (default: available CPUs); outputs do not depend on it")
    parser.add_argument("--force", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="overwrite existing outputs")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                        default=default, help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanbench",
        description="Build visual-localization benchmarks from colored laser scans and score pose estimates.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("slice-db", help="slice every registered scan into perspective RGBD database images")
    p.add_argument("registry", help="scan registry (tab-separated)")
    p.add_argument("out_dir", help="dataset root; images go to OUT_DIR/database/<scan_id>/")
    _global_flags(p, suppress=True)

    p = sub.add_parser("synth-queries", help="synthesize query images with exact ground-truth poses")
    p.add_argument("registry", help="scan registry (tab-separated)")
    p.add_argument("out_dir", help="dataset root; writes OUT_DIR/queries/ and OUT_DIR/manifest.txt")
    p.add_argument("-n", "--num-queries", type=int, default=None,
                   help="number of queries (default: config num_queries)")
    _global_flags(p, suppress=True)

    p = sub.add_parser("evaluate", help="score pose estimates (and optionally retrieval) against a manifest")
    p.add_argument("manifest", help="query manifest")
    p.add_argument("estimates", help="estimates file: query_id + 12 numbers, or 'query_id FAILED'")
    p.add_argument("--candidates", default=None, help="ranked retrieval candidates per query")
    p.add_argument("--top-k", type=int, default=None, help="retrieval cutoff (default: config top_k)")
    p.add_argument("--out", default=None,
                   help="report directory (default: <estimates dir>/report)")
    _global_flags(p, suppress=True)

    p = sub.add_parser("stats", help="print dataset statistics (#locations, #database, #query)")
    p.add_argument("dataset_dir", help="dataset root containing database/ and manifest.txt")
    _global_flags(p, suppress=True)
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set("seed", str(args.seed))
    if args.workers is not None:
        cfg.set("workers", args.workers)
    return cfg


def _workers(cfg: RunConfig) -> int:
    return cfg["workers"] if cfg["workers"] > 0 else (os.cpu_count() or 1)


def _claim(path: Path, force: bool) -> None:
    """Refuse to overwrite ``path`` unless forced; when forced, clear it."""
    if path.exists():
        if not force:
            raise Refused(f"{path} exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


def _registry(path):
    reg = load_scan_registry(path)
    if len(reg) == 0:
        raise InputError(f"registry {path} lists no scans")
    return reg


def cmd_slice_db(args, cfg: RunConfig) -> int:
    reg = _registry(args.registry)
    config = cfg.slice_config()
    db = Path(args.out_dir) / "database"
    _claim(db, args.force)
    db.mkdir(parents=True)
    (db / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    total = 0
    loaded = (None, None)  # consecutive scans may share a cloud file
    for entry in reg:
        path = Path(entry.cloud_path).resolve()
        if loaded[0] != path:
            loaded = (path, load_ply(path))
        cloud = loaded[1]
        result = slice_scan(cloud, entry.scanner_pose, config, scan_id=entry.scan_id, workers=_workers(cfg))
        scan_dir = db / entry.scan_id
        saturated = sum(write_rgbd(im, scan_dir) for im in result.images)
        missing = np.mean(list(result.missing_fractions.values())) if result.missing_fractions else float("nan")
        total += len(result.images)
        print(f"{entry.scan_id}: written {len(result.images)}, skipped {len(result.skipped)}, "
              f"mean missing {missing:.4f}" + (f", saturated depth px {saturated}" if saturated else ""))
    print(f"database images: {total}")
    return EXIT_OK


def cmd_synth_queries(args, cfg: RunConfig) -> int:
    n = args.num_queries if args.num_queries is not None else cfg["num_queries"]
    if n < 1:
        raise InputError(f"number of queries must be positive, got {n}")
    reg = _registry(args.registry)
    config = cfg.synth_config()
    out = Path(args.out_dir)
    _claim(out / "queries", args.force)
    _claim(out / "manifest.txt", args.force)
    (out / "queries").mkdir(parents=True)
    (out / "queries" / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    manifest = synthesize_queries(reg, n, config, cfg["seed"], out_dir=out, workers=_workers(cfg))
    done = manifest.queries
    print(f"queries: {len(done)}, skipped: {len(manifest) - len(done)}")
    print(f"flashlight: {sum(r.flashlight for r in done)}, occluded: {sum(r.occlusion for r in done)}, "
          f"noise: {sum(r.noise_sigma > 0 for r in done)}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    manifest = read_manifest(args.manifest)
    estimates = read_estimates(args.estimates)
    report = evaluate_poses(manifest, estimates, cfg.thresholds())
    if args.candidates:
        k = args.top_k if args.top_k is not None else cfg["top_k"]
        attach_retrieval(report, manifest, read_candidates(args.candidates), k)
    out = Path(args.out) if args.out else Path(args.estimates).parent / "report"
    _claim(out, args.force)
    write_report(report, out)
    (out / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    sys.stdout.write(format_table(report))
    return EXIT_OK


def dataset_stats(root) -> tuple:
    """``(locations, database images, queries or None)`` for a dataset directory."""
    root = Path(root)
    db = root / "database"
    scans = [d for d in db.iterdir() if d.is_dir()] if db.is_dir() else []
    n_db = sum(1 for d in scans for _ in d.glob("*.rgb.png"))
    manifest = root / "manifest.txt"
    n_q = len(read_manifest(manifest).queries) if manifest.is_file() else None
    return len(scans), n_db, n_q


def cmd_stats(args, cfg: RunConfig) -> int:
    root = Path(args.dataset_dir)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    locations, n_db, n_q = dataset_stats(root)
    print(f"{'Dataset':<24}{'#Locations':>12}{'#Database':>12}{'#Query':>10}{'GT':>6}")
    print(f"{root.name or str(root):<24}{locations:>12}{n_db:>12}{'n/a' if n_q is None else n_q:>10}{'VS':>6}")
    return EXIT_OK


COMMANDS = {
    "slice-db": cmd_slice_db,
    "synth-queries": cmd_synth_queries,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
}


def _setup_logging():
    level = os.environ.get("TBPOS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except Refused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (InputError, ConfigError, RegistryError, ManifestError, ParseError, PlyError,
            EvaluationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
