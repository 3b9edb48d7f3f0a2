"""Human-readable tables and machine-readable CSV emission.

Every writer produces deterministic bytes: floats are rendered with repr
(shortest round-trip form), line endings are always "\\n", and row order
is fixed by the run structure, never by dict iteration over unsorted
inputs.
"""

from __future__ import annotations

import csv
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .abm import AuditReport
from .core import Trajectory, Trip
from .errors import InputError
from .evaluation import VARIANT_LABELS, RunReport
from .synth import SynthConfig

_TABLE_COLUMNS = (
    ("RMSE", "rmse", 1.0),
    ("MAE", "mae", 1.0),
    ("End AE", "end_ae", 1.0),
    ("Shadow %", "shadow_rate", 100.0),
    ("e_phys %", "ephys_rate", 100.0),
    ("Shift %", "shift_rate", 100.0),
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def _write_rows(path: str, header: Sequence[str],
                rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _aligned(rows: List[List[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])]
        cells += [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def _stat_table(stats_by_variant, variants, title: str) -> str:
    rows = [["Method"] + [label for label, _, _ in _TABLE_COLUMNS]]
    for name in variants:
        stats = stats_by_variant.get(name)
        if stats is None:
            continue
        row = [VARIANT_LABELS[name]]
        for _, metric, scale in _TABLE_COLUMNS:
            s = stats[metric]
            row.append("%.2f +/- %.2f" % (s.mean * scale, s.std * scale))
        rows.append(row)
    return title + "\n" + _aligned(rows)


def format_overall_table(run: RunReport) -> str:
    n = len(run.folds)
    return _stat_table(run.overall, run.config.variants,
                       "All test trips (mean +/- std over %d folds)" % n)


def format_stress_table(run: RunReport) -> str:
    if not run.stress:
        return ("APC-bad stress subset: no fold had >= 3 bad trips; "
                "nothing to aggregate")
    title = ("APC-bad stress subset (mean +/- std over %d qualifying folds)"
             % run.n_stress_folds)
    return _stat_table(run.stress, run.config.variants, title)


# ---------------------------------------------------------------------------
# machine-readable run outputs

_STAT_METRICS = ("rmse", "mae", "end_ae", "shadow_rate", "ephys_rate",
                 "shift_rate")


def _stat_header() -> List[str]:
    cols = ["variant"]
    for m in _STAT_METRICS:
        cols += [m + "_mean", m + "_std"]
    return cols + ["n_folds"]


def _stat_rows(stats_by_variant, variants):
    for name in variants:
        stats = stats_by_variant.get(name)
        if stats is None:
            continue
        row: List[object] = [name]
        for m in _STAT_METRICS:
            row += [stats[m].mean, stats[m].std]
        row.append(stats["rmse"].n)
        yield row


def write_overall_csv(run: RunReport, path: str) -> None:
    _write_rows(path, _stat_header(),
                _stat_rows(run.overall, run.config.variants))


def write_stress_csv(run: RunReport, path: str) -> None:
    _write_rows(path, _stat_header(),
                _stat_rows(run.stress, run.config.variants))


def write_folds_csv(run: RunReport, path: str) -> None:
    header = ["seed", "fold", "variant"] + list(_STAT_METRICS) + \
        ["tau_bad", "n_bad", "train_shadow_unit", "train_shadow_reweighted",
         "artifact_hash"]

    def rows():
        for fr in run.folds:
            for name in run.config.variants:
                means = fr.means[name]
                yield [fr.seed, fr.fold_index, name] + \
                    [means[m] for m in _STAT_METRICS] + \
                    [fr.tau_bad, fr.n_bad, fr.train_shadow_unit,
                     fr.train_shadow_reweighted, fr.artifact_hash]

    _write_rows(path, header, rows())


TRIP_CSV_HEADER = (
    "seed", "fold", "variant", "trip_id", "n_stops", "rmse", "mae",
    "end_ae", "raw_rmse", "shadow_rate", "ephys_rate", "cum_ephys",
    "gating_freq", "shift_fired", "shift_delta", "apc_bad",
    "abm_coverage", "abm_w1", "abm_shocks",
)


def write_trips_csv(run: RunReport, path: str) -> None:
    def rows():
        for fr in run.folds:
            for e in fr.trip_evals:
                yield [fr.seed, fr.fold_index, e.variant, e.trip_id,
                       e.n_stops, e.rmse, e.mae, e.end_ae, e.raw_rmse,
                       e.shadow_rate, e.ephys_rate, e.cum_ephys,
                       e.gating_freq, e.shift_fired, e.shift_delta,
                       e.apc_bad, e.abm_coverage, e.abm_w1, e.abm_shocks]

    _write_rows(path, TRIP_CSV_HEADER, rows())


TRACE_CSV_HEADER = (
    "seed", "fold", "trip_id", "stop_index", "stop_id", "hour_bin",
    "b_hat", "a_hat", "a_star", "b_star", "l_phys", "e_phys", "anchor",
    "disagreement", "alpha", "l_fused", "mc_load",
)


def write_traces_csv(run: RunReport, trips_by_id: Dict[str, Trip],
                     path: str) -> None:
    """Per-stop traces of the retained (proposed-variant) trajectories."""
    def rows():
        for fr in run.folds:
            for tid in sorted(fr.proposed_trajectories):
                traj = fr.proposed_trajectories[tid]
                trip = trips_by_id[tid]
                for k, t in enumerate(traj.traces):
                    ev = trip.stops[k]
                    yield [fr.seed, fr.fold_index, tid, k, ev.stop_id,
                           ev.hour_bin, t.b_hat, t.a_hat, t.a_star,
                           t.b_star, t.l_phys, t.e_phys, t.anchor,
                           t.disagreement, t.alpha, t.l_fused, ev.mc_load]

    _write_rows(path, TRACE_CSV_HEADER, rows())


# ---------------------------------------------------------------------------
# corpus summary (generator diagnostics)

def corpus_summary_lines(trips: Sequence[Trip],
                         cfg: Optional[SynthConfig] = None) -> List[str]:
    """Trip count, stop-count histogram, and per-hour device ratios."""
    lines = ["trips,%d" % len(trips), ""]
    counts: Dict[int, int] = {}
    for t in trips:
        counts[len(t.stops)] = counts.get(len(t.stops), 0) + 1
    lines.append("n_stops,n_trips")
    for n in sorted(counts):
        lines.append("%d,%d" % (n, counts[n]))
    lines.append("")
    load_sum = [0.0] * 24
    dev_sum = [0.0] * 24
    for t in trips:
        for ev in t.stops:
            if ev.wifi_valid and ev.wifi_count:
                load_sum[ev.hour_bin] += ev.mc_load
                dev_sum[ev.hour_bin] += ev.wifi_count
    lines.append("hour,device_ratio_config,device_ratio_observed")
    for h in range(24):
        conf = repr(float(cfg.device_ratio_per_hour[h])) if cfg else ""
        obs = repr(load_sum[h] / dev_sum[h]) if dev_sum[h] > 0 else ""
        lines.append("%d,%s,%s" % (h, conf, obs))
    return lines


# ---------------------------------------------------------------------------
# audit envelope

AUDIT_CSV_HEADER = (
    "stop_index", "stop_id", "estimate", "mc_load", "lower", "upper",
    "w1", "covered", "shock",
)


def write_audit_csv(report: AuditReport, trajectory: Trajectory,
                    trip: Trip, path: str) -> None:
    def rows():
        for k, ev in enumerate(trip.stops):
            l = trajectory.l_final[k]
            covered = report.lower[k] <= l <= report.upper[k]
            yield [k, ev.stop_id, l, ev.mc_load, report.lower[k],
                   report.upper[k], report.w1[k], covered,
                   report.shocks[k]]

    _write_rows(path, AUDIT_CSV_HEADER, rows())


# ---------------------------------------------------------------------------
# failure-case selection

CASE_CRITERIA = ("rmse", "cum_ephys", "gating_freq")


def rank_cases(trip_rows: Sequence[Dict[str, str]],
               criterion: str) -> List[Tuple[str, float]]:
    """Rank test trips of the proposed variant, worst first.

    Each trip is scored by the mean of its per-seed test evaluations;
    ties break toward the lexically smaller trip id so rankings are
    stable under reordering of the input rows.
    """
    if criterion not in CASE_CRITERIA:
        raise InputError("unknown criterion %r, expected one of %s"
                         % (criterion, ", ".join(CASE_CRITERIA)))
    sums: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    for row in trip_rows:
        if row.get("variant") != "proposed":
            continue
        try:
            score = float(row[criterion])
        except (KeyError, ValueError) as exc:
            raise InputError("trip record lacks a numeric %r field"
                             % criterion) from exc
        tid = row["trip_id"]
        sums[tid] = sums.get(tid, 0.0) + score
        counts[tid] = counts.get(tid, 0) + 1
    scored = [(tid, sums[tid] / counts[tid]) for tid in sums]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def write_cases_csv(ranked: Sequence[Tuple[str, float]],
                    trace_rows: Sequence[Dict[str, str]],
                    path: str) -> None:
    """Traces of the selected trips, prefixed with rank and score."""
    rank_of = {tid: i + 1 for i, (tid, _) in enumerate(ranked)}
    score_of = dict(ranked)
    header = ["rank", "score"] + list(TRACE_CSV_HEADER)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for tid, _ in ranked:
            for row in trace_rows:
                if row["trip_id"] != tid:
                    continue
                writer.writerow([rank_of[tid], _cell(score_of[tid])]
                                + [row[c] for c in TRACE_CSV_HEADER])
