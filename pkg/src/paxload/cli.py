"""Command-line harness: synth, eval, audit, cases.

Exit codes: 0 on success, 1 when an internal invariant is violated, 2 for
user or input errors. Every command is a pure function of its input files
and flags; re-running writes byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import List, Optional

from . import report
from .abm import audit
from .config import apply_overrides, load_config, matrix_config, \
    synth_config, write_effective
from .corpus_io import read_corpus, write_corpus
from .engine import RULE_FUSION, run_trip
from .errors import ContractViolation, CorpusInvariantError, InputError
from .evaluation import SEED_ABM, derive_seed, fit_fold, run_ablation_matrix
from .synth import generate_corpus


def _add_common(sub):
    sub.add_argument("--config", default=None,
                     help="INI config file; omitted keys keep defaults")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="SECTION.KEY=VALUE",
                     help="override one config value (repeatable)")


def _resolved_config(args):
    cp = load_config(args.config)
    apply_overrides(cp, args.overrides)
    return cp


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputError("cannot create output dir %s: %s" % (path, exc))


def cmd_synth(args) -> int:
    cp = _resolved_config(args)
    cfg = synth_config(cp)
    trips = generate_corpus(cfg)
    write_corpus(trips, args.out)
    for line in report.corpus_summary_lines(trips, cfg):
        print(line)
    return 0


def cmd_eval(args) -> int:
    cp = _resolved_config(args)
    variants = None
    if args.variants is not None:
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        if not variants:
            raise InputError("--variants must name at least one variant")
    threads = args.threads if args.threads is not None \
        else (os.cpu_count() or 1)
    cfg = matrix_config(cp, variants=variants, threads=threads)
    trips = read_corpus(args.corpus)
    run = run_ablation_matrix(trips, cfg)

    _ensure_dir(args.out)

    def join(name: str) -> str:
        return os.path.join(args.out, name)

    write_effective(cp, join("effective.ini"))
    report.write_overall_csv(run, join("overall.csv"))
    report.write_stress_csv(run, join("stress.csv"))
    report.write_folds_csv(run, join("folds.csv"))
    report.write_trips_csv(run, join("trips.csv"))
    trips_by_id = {t.trip_id: t for t in trips}
    report.write_traces_csv(run, trips_by_id, join("traces.csv"))

    overall = report.format_overall_table(run)
    stress = report.format_stress_table(run)
    with open(join("summary.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(overall + "\n\n" + stress + "\n")
    print(overall)
    print()
    print(stress)
    return 0


def cmd_audit(args) -> int:
    cp = _resolved_config(args)
    cfg = matrix_config(cp, threads=1)
    trips = read_corpus(args.corpus)
    by_id = {t.trip_id: t for t in trips}
    if args.trip not in by_id:
        raise InputError("trip %r not in corpus (%d trips)"
                         % (args.trip, len(by_id)))
    target = by_id[args.trip]
    train = [t for t in trips if t.trip_id != args.trip]
    if not train:
        raise InputError("corpus has no other trips to calibrate on")

    art = fit_fold(train, cfg, args.seed, 0)
    b, a = art.reweighted_model.predict(art.builder.build(target))
    traj = run_trip(target, None, None, art.anchor_map, cfg.trust_params(),
                    cfg.capacity, RULE_FUSION, proposals=(b, a))
    rep = audit(traj, target, art.abm_rates, cfg.abm_samples,
                derive_seed(args.seed, 0, SEED_ABM), cfg.capacity,
                cfg.shock_w1_threshold)

    _ensure_dir(args.out)
    out_path = os.path.join(args.out, "audit_%s.csv" % args.trip)
    report.write_audit_csv(rep, traj, target, out_path)
    write_effective(cp, os.path.join(args.out, "effective.ini"))
    print("trip,%s" % args.trip)
    print("stops,%d" % len(target.stops))
    print("coverage,%r" % rep.coverage)
    print("shocks,%d" % sum(rep.shocks))
    return 0


def _read_csv_rows(path: str) -> List[dict]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError("cannot open %s: %s" % (path, exc)) from exc


def cmd_cases(args) -> int:
    if args.top < 0:
        raise InputError("--top must be >= 0")
    trip_rows = _read_csv_rows(os.path.join(args.run, "trips.csv"))
    trace_rows = _read_csv_rows(os.path.join(args.run, "traces.csv"))
    ranked = report.rank_cases(trip_rows, args.criterion)[:args.top]
    out_path = os.path.join(args.run, "cases_%s.csv" % args.criterion)
    report.write_cases_csv(ranked, trace_rows, out_path)
    print("rank,trip_id,score")
    for i, (tid, score) in enumerate(ranked, start=1):
        print("%d,%s,%r" % (i, tid, score))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paxload",
        description="Passenger-load estimation pipeline and its "
                    "evaluation harness")
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--out", required=True, help="corpus file to write")
    _add_common(synth)
    synth.set_defaults(func=cmd_synth)

    ev = subs.add_parser("eval", help="run the cross-validated ablation "
                                      "matrix on a corpus")
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--variants", default=None,
                    help="comma-separated subset of method variants")
    ev.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: available cores); "
                         "results do not depend on this")
    _add_common(ev)
    ev.set_defaults(func=cmd_eval)

    au = subs.add_parser("audit", help="plausibility envelope for one "
                                       "held-out trip")
    au.add_argument("--corpus", required=True)
    au.add_argument("--trip", required=True, help="trip id to audit")
    au.add_argument("--out", required=True, help="report directory")
    au.add_argument("--seed", type=int, default=42)
    _add_common(au)
    au.set_defaults(func=cmd_audit)

    ca = subs.add_parser("cases", help="rank failure cases from an eval "
                                       "run directory")
    ca.add_argument("--run", required=True, help="directory cmd_eval wrote")
    ca.add_argument("--criterion", required=True,
                    choices=report.CASE_CRITERIA)
    ca.add_argument("--top", type=int, default=5)
    ca.set_defaults(func=cmd_cases)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (ContractViolation, CorpusInvariantError) as exc:
        print("internal error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
