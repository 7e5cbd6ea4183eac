"""Scoring of pose estimates and retrieval candidates against a query manifest."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from scanbench.geometry import rotation_error, translation_error
from scanbench.io.results import scan_of_image


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalThresholds:
    translation: tuple = (0.25, 0.5, 1.0)
    rotation: float = 10.0

    def __post_init__(self):
        t = tuple(float(x) for x in self.translation)
        if not t or t[0] <= 0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"translation thresholds must be positive and strictly increasing, got {t}")
        if not self.rotation > 0:
            raise ValueError("rotation threshold must be positive")
        object.__setattr__(self, "translation", t)


@dataclass
class QueryRow:
    query_id: str
    t_err: float | None  # None when the localizer produced no estimate
    r_err: float | None
    passes: tuple

    @property
    def failed(self):
        return self.t_err is None


@dataclass(frozen=True)
class PrecisionStats:
    """Error statistics over successful queries; ``n == 0`` marks an empty set."""

    n: int
    mean_t: float | None = None
    mean_r: float | None = None
    median_t: float | None = None
    median_r: float | None = None

    @property
    def empty(self) -> bool:
        return self.n == 0


@dataclass
class EvalReport:
    thresholds: EvalThresholds
    rows: list
    counts: tuple
    n_failed: int
    precision: PrecisionStats
    retrieval: float | None = None
    retrieval_k: int | None = None
    retrieval_hits: int | None = None

    @property
    def n_queries(self) -> int:
        return len(self.rows)

    @property
    def rates(self) -> tuple:
        return tuple(c / self.n_queries for c in self.counts) if self.n_queries else tuple(0.0 for _ in self.counts)


def passes(t_err: float, r_err: float, t_thr: float, r_thr: float) -> bool:
    return t_err <= t_thr and r_err <= r_thr


def evaluate_poses(manifest, estimates, thresholds: EvalThresholds | None = None) -> EvalReport:
    """Score ``estimates`` (``(query_id, Pose or None)`` pairs) against the manifest.

    Queries without an estimate, or with a FAILED one, pass no threshold.
    """
    thresholds = thresholds or EvalThresholds()
    gt = {r.query_id: r.pose for r in manifest.queries}
    est = {}
    for qid, pose in estimates:
        if qid not in gt:
            raise EvaluationError(f"estimate for unknown query {qid!r}")
        if qid in est:
            raise EvaluationError(f"duplicate estimate for {qid!r}")
        est[qid] = pose

    rows = []
    for qid, gt_pose in gt.items():
        pose = est.get(qid)
        if pose is None:
            rows.append(QueryRow(qid, None, None, tuple(False for _ in thresholds.translation)))
            continue
        t, r = translation_error(gt_pose, pose), rotation_error(gt_pose, pose)
        rows.append(QueryRow(qid, t, r, tuple(passes(t, r, tt, thresholds.rotation)
                                              for tt in thresholds.translation)))
    counts = tuple(sum(row.passes[i] for row in rows) for i in range(len(thresholds.translation)))
    precision = precision_stats(rows, (thresholds.translation[0], thresholds.rotation))
    return EvalReport(thresholds, rows, counts, sum(r.failed for r in rows), precision)


def precision_stats(rows, threshold) -> PrecisionStats:
    t_thr, r_thr = threshold
    ok = [r for r in rows if not r.failed and passes(r.t_err, r.r_err, t_thr, r_thr)]
    if not ok:
        return PrecisionStats(0)
    ts = [r.t_err for r in ok]
    rs = [r.r_err for r in ok]
    return PrecisionStats(len(ok), statistics.fmean(ts), statistics.fmean(rs),
                          statistics.median(ts), statistics.median(rs))


def retrieval_hits(manifest, candidates, k: int) -> int:
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = dict(candidates)
    hits = 0
    for rec in manifest.queries:
        top = ranked.get(rec.query_id, [])[:k]
        if any(scan_of_image(image_id) == rec.scan_id for image_id in top):
            hits += 1
    return hits


def retrieval_success(manifest, candidates, k: int = 10) -> float:
    """Share of queries with an image from their own scan among the top ``k`` candidates."""
    n = len(manifest.queries)
    return retrieval_hits(manifest, candidates, k) / n if n else 0.0


def attach_retrieval(report: EvalReport, manifest, candidates, k: int = 10) -> EvalReport:
    report.retrieval_k = k
    report.retrieval_hits = retrieval_hits(manifest, candidates, k)
    report.retrieval = report.retrieval_hits / report.n_queries if report.n_queries else 0.0
    return report


def percent(count: int, total: int) -> str:
    """Percentage rounded half-up to one decimal, computed exactly."""
    if total == 0:
        return "n/a"
    value = Decimal(count * 100) / Decimal(total)
    return f"{value.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"


# -- report output ----------------------------------------------------------

def _thr_label(t: float) -> str:
    return repr(float(t))


def format_table(report: EvalReport) -> str:
    th = report.thresholds
    heads = [f"{_thr_label(t)}m" for t in th.translation]
    cells = [percent(c, report.n_queries) for c in report.counts]
    if report.retrieval is not None:
        heads.append(f"Top{report.retrieval_k}")
        cells.append(percent(report.retrieval_hits, report.n_queries))
    width = max(8, *(len(h) for h in heads), *(len(c) for c in cells))
    lines = [
        f"queries: {report.n_queries}  (no estimate: {report.n_failed})  angular threshold: {th.rotation:g} deg",
        f"{'':<10}" + "".join(h.rjust(width + 2) for h in heads),
        f"{'success':<10}" + "".join(c.rjust(width + 2) for c in cells),
    ]
    p = report.precision
    if p.empty:
        lines.append(f"precision @ {_thr_label(th.translation[0])}m/{th.rotation:g}deg: no successes")
    else:
        lines.append(
            f"precision @ {_thr_label(th.translation[0])}m/{th.rotation:g}deg over {p.n}: "
            f"mean {p.mean_t:.3f} m / {p.mean_r:.2f} deg, median {p.median_t:.3f} m / {p.median_r:.2f} deg"
        )
    return "\n".join(lines) + "\n"


def format_summary(report: EvalReport) -> str:
    """Machine-readable ``key = value`` summary at full precision."""
    th = report.thresholds
    kv = [("n_queries", report.n_queries), ("n_failed", report.n_failed),
          ("rotation_threshold_deg", repr(th.rotation))]
    for t, c in zip(th.translation, report.counts):
        kv.append((f"success_count_{_thr_label(t)}", c))
        kv.append((f"success_rate_{_thr_label(t)}", repr(c / report.n_queries) if report.n_queries else "nan"))
    p = report.precision
    kv.append(("precision_n", p.n))
    for name in ("mean_t", "mean_r", "median_t", "median_r"):
        val = getattr(p, name)
        kv.append((f"precision_{name}", "empty" if val is None else repr(val)))
    if report.retrieval is not None:
        kv.append(("retrieval_k", report.retrieval_k))
        kv.append(("retrieval_hits", report.retrieval_hits))
        kv.append(("retrieval_rate", repr(report.retrieval)))
    return "".join(f"{k} = {v}\n" for k, v in kv)


def format_rows_csv(report: EvalReport) -> str:
    head = ["query_id", "t_err_m", "r_err_deg"] + [f"pass_{_thr_label(t)}" for t in report.thresholds.translation]
    lines = [",".join(head)]
    for r in report.rows:
        t = "" if r.failed else repr(r.t_err)
        a = "" if r.failed else repr(r.r_err)
        lines.append(",".join([r.query_id, t, a] + [str(int(p)) for p in r.passes]))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(format_table(report), encoding="utf-8")
    (out / "summary.txt").write_text(format_summary(report), encoding="utf-8")
    (out / "per_query.csv").write_text(format_rows_csv(report), encoding="utf-8")
