"""Acceptance gate: thirteen pass/fail checks over the whole pipeline.

Each test is one criterion, numbered, and prints a single [PASS] line
with the measured quantities when it succeeds, so `pytest -v` reads as
a checklist. The expensive fixtures (the full default-corpus ablation
matrix and the two shift-probe corpora) are shared module-wide.
"""

import csv
import filecmp
import itertools
import math
from collections import defaultdict

import numpy as np
import pytest

from oracles import brute_force_projection, logistic_trust, w1_to_point
from paxload.abm import calibrate_rates, audit, simulate, w1_point_mass
from paxload.cli import main
from paxload.core import Trajectory
from paxload.engine import RULE_FUSION, run_trip
from paxload.errors import ContractViolation
from paxload.evaluation import (
    MatrixConfig,
    evaluate_fold,
    make_splits,
    run_ablation_matrix,
)
from paxload.fusion import fuse, trust_weight
from paxload.projection import project
from paxload.synth import SynthConfig, generate_corpus

CAPACITY = 80.0


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(SynthConfig())


@pytest.fixture(scope="module")
def default_run(default_corpus):
    # the full 15-fold protocol at contract defaults
    return run_ablation_matrix(default_corpus, MatrixConfig(threads=1))


def _by_seed(run):
    folds = defaultdict(list)
    for fr in run.folds:
        folds[fr.seed].append(fr)
    return folds


# --------------------------------------------------------------------------
# 1-2: physical projection against the enumeration oracle

def test_criterion_01_projection_oracle_equivalence():
    c = 10
    checked = 0
    for l_prev, b_hat, a_hat in itertools.product(range(16), repeat=3):
        if l_prev > c:
            # out of the operation's domain: a caller bug by contract
            with pytest.raises(ContractViolation):
                project(float(l_prev), float(b_hat), float(a_hat), float(c))
        else:
            ref = brute_force_projection(l_prev, b_hat, a_hat, c)
            got = project(float(l_prev), float(b_hat), float(a_hat), float(c))
            assert got == (float(ref[0]), float(ref[1]),
                           float(ref[2]), float(ref[3])), \
                (l_prev, b_hat, a_hat)
        checked += 1
    assert checked == 16 ** 3
    print("[PASS] criterion 1: project == brute-force oracle on all "
          "%d grid cases (C=10)" % checked)


def test_criterion_02_feasibility_sweeps():
    rng = np.random.default_rng(20260818)
    for _ in range(100_000):
        l_prev = float(rng.uniform(0.0, CAPACITY))
        b_hat = float(rng.uniform(0.0, 3.0 * CAPACITY))
        a_hat = float(rng.uniform(0.0, 3.0 * CAPACITY))
        l_phys = project(l_prev, b_hat, a_hat, CAPACITY)[2]
        assert 0.0 <= l_phys <= CAPACITY
    for _ in range(10_000):
        l_phys = float(rng.uniform(0.0, CAPACITY))
        anchor = float(rng.uniform(0.0, 3.0 * CAPACITY))
        alpha = float(rng.uniform(0.0, 1.0))
        fused = fuse(l_phys, anchor, alpha, CAPACITY)
        assert 0.0 <= fused <= CAPACITY
    print("[PASS] criterion 2: 10^5 projections and 10^4 fusions "
          "stayed inside [0, %g]" % CAPACITY)


# --------------------------------------------------------------------------
# 3: trust policy closed form

def test_criterion_03_trust_policy_closed_form():
    assert trust_weight(0, 12.0, 3.0) == 1.0
    assert trust_weight(1, 0.0, 0.0) == 0.5
    ds = np.linspace(0.0, 60.0, 50)
    es = np.linspace(0.0, 25.0, 50)
    grid = np.array([[trust_weight(1, d, e) for e in es] for d in ds])
    assert np.all(np.diff(grid, axis=0) > 0.0)  # increasing in d
    assert np.all(np.diff(grid, axis=1) > 0.0)  # increasing in e
    # spot check against the scalar re-derivation
    for d, e in ((1.0, 0.0), (15.0, 5.0), (40.0, 12.5)):
        assert trust_weight(1, d, e) == pytest.approx(
            logistic_trust(d, e, 15.0, 5.0), abs=1e-15)
    print("[PASS] criterion 3: alpha(v=0)=1, alpha(1,0,0)=0.5, strictly "
          "increasing on the 50x50 (d, e) grid")


# --------------------------------------------------------------------------
# 4: exact truth recovery with a ground-truth stub, anchors disabled

def test_criterion_04_truth_recovery_limit(default_corpus):
    worst = 0.0
    for trip in default_corpus:
        b = [float(ev.mc_board) for ev in trip.stops]
        a = [float(ev.mc_alight) for ev in trip.stops]
        traj = run_trip(trip, None, None, None, None, CAPACITY,
                        RULE_FUSION, proposals=(b, a))
        truth = [float(ev.mc_load) for ev in trip.stops]
        assert list(traj.l_final) == truth
        assert all(t.e_phys == 0.0 for t in traj.traces)
        worst = max(worst, max(abs(x - y)
                               for x, y in zip(traj.l_final, truth)))
    print("[PASS] criterion 4: ground-truth replay reproduced mc_load "
          "exactly on all %d trips (max |err| %.1f, e_phys 0)"
          % (len(default_corpus), worst))


# --------------------------------------------------------------------------
# 5-8: orderings on the default corpus

def test_criterion_05_drift_ordering(default_run):
    lines = []
    for seed, folds in sorted(_by_seed(default_run).items()):
        prop = np.mean([f.means["proposed"]["rmse"] for f in folds])
        perc = np.mean([f.means["perception_only"]["rmse"] for f in folds])
        phys = np.mean([f.means["phys_only"]["rmse"] for f in folds])
        assert perc > 1.5 * prop, (seed, perc, prop)
        assert phys > 1.2 * prop, (seed, phys, prop)
        lines.append("seed %d: %.2f/%.2f/%.2f" % (seed, perc, phys, prop))
    print("[PASS] criterion 5: RMSE perception > 1.5x and phys > 1.2x "
          "proposed on every seed (%s)" % "; ".join(lines))


def test_criterion_06_residual_reduction(default_run):
    prop = sum(f.means["proposed"]["ephys_rate"] for f in default_run.folds)
    phys = sum(f.means["phys_only"]["ephys_rate"] for f in default_run.folds)
    assert prop < 0.5 * phys, (prop, phys)
    print("[PASS] criterion 6: e_phys rate proposed/phys-only = %.4f "
          "(< 0.5)" % (prop / phys))


def test_criterion_07_reweighting_diagnostic(default_run):
    lines = []
    for seed, folds in sorted(_by_seed(default_run).items()):
        unit = np.mean([f.train_shadow_unit for f in folds])
        rew = np.mean([f.train_shadow_reweighted for f in folds])
        assert rew <= unit, (seed, unit, rew)
        lines.append("seed %d: %.4f -> %.4f" % (seed, unit, rew))
    print("[PASS] criterion 7: reweighting does not raise shadow "
          "infeasibility on any seed (%s)" % "; ".join(lines))


def test_criterion_08_stress_robustness(default_run):
    assert default_run.stress, "no fold had enough APC-bad trips"
    rule = default_run.stress["proposed"]["rmse"].mean
    fixed = default_run.stress["fixed_fusion"]["rmse"].mean
    assert rule <= fixed, (rule, fixed)
    print("[PASS] criterion 8: APC-bad subset RMSE rule %.3f <= "
          "fixed %.3f over %d qualifying folds"
          % (rule, fixed, default_run.n_stress_folds))


# --------------------------------------------------------------------------
# 9: shift probe fires on offsets, never on the proposed row

def test_criterion_09_shift_probe_behavior():
    probe_cfg = MatrixConfig(seeds=(42,),
                             variants=("with_shift", "proposed"),
                             abm_in_matrix=False)
    cold = generate_corpus(SynthConfig(
        n_trips=200, stops_min=6, stops_max=9, demand_scale=24.0,
        anchor_sigma=0.03, cold_start_prob=0.35, cold_start_stops_min=2,
        cold_start_stops_max=2, wifi_missing_prob=0.30, wifi_fade_prob=0.0))
    injected = sum(1 for t in cold
                   if t.stops[0].apc_board_raw == 0
                   and t.stops[0].mc_board > 0) / len(cold)
    assert injected >= 0.30, injected
    run = run_ablation_matrix(cold, probe_cfg)
    fired = run.overall["with_shift"]["shift_rate"].mean
    proposed = run.overall["proposed"]["shift_rate"].mean
    assert fired > 0.0
    assert proposed == 0.0

    flat = generate_corpus(SynthConfig(
        n_trips=200, stops_min=6, stops_max=9, demand_scale=24.0,
        anchor_sigma=0.03, cold_start_prob=0.0, spike_prob=0.0,
        wifi_missing_prob=0.30, wifi_fade_prob=0.0))
    run_flat = run_ablation_matrix(flat, probe_cfg)
    false_rate = run_flat.overall["with_shift"]["shift_rate"].mean
    assert false_rate < 0.05, false_rate
    print("[PASS] criterion 9: offsets in %.0f%% of trips -> probe fired "
          "on %.1f%% (proposed 0%%); offset-free false-fire %.1f%% (< 5%%)"
          % (100 * injected, 100 * fired, 100 * false_rate))


# --------------------------------------------------------------------------
# 10: CV protocol soundness

def test_criterion_10_cv_protocol(default_corpus, default_run):
    ids = sorted(t.trip_id for t in default_corpus)
    plan = make_splits(ids, seeds=(42, 123, 999), n_folds=5)
    assert len(plan.folds) == 15
    for seed in (42, 123, 999):
        seed_folds = [f for f in plan.folds if f.seed == seed]
        tests = [set(f.test_ids) for f in seed_folds]
        for i, a in enumerate(tests):
            for b in tests[i + 1:]:
                assert not (a & b)  # disjoint test sets
        assert set().union(*tests) == set(ids)  # coverage
        for f in seed_folds:
            # atomicity: the split unit is whole trips, train is complement
            assert set(f.train_ids) | set(f.test_ids) == set(ids)
            assert not (set(f.train_ids) & set(f.test_ids))

    # leakage guard: fitted artifacts blind to test-side content
    by_id = {t.trip_id: t for t in default_corpus}
    fold = plan.folds[0]
    guard_cfg = MatrixConfig(seeds=(42,), n_trees=40, n_bins=16,
                             abm_in_matrix=False)
    base = evaluate_fold(by_id, fold, guard_cfg)
    tampered = dict(by_id)
    victim = by_id[fold.test_ids[0]]
    tampered[victim.trip_id] = Trajectory  # placeholder, replaced below
    stops = tuple(ev.__class__(**{**ev.__dict__, "wifi_count": 1,
                                  "wifi_valid": 1,
                                  "apc_board_raw": ev.apc_board_raw + 7})
                  for ev in victim.stops)
    tampered[victim.trip_id] = victim.__class__(trip_id=victim.trip_id,
                                                stops=stops)
    perturbed = evaluate_fold(tampered, fold, guard_cfg)
    assert perturbed.artifact_hash == base.artifact_hash

    # aggregation identity: stored means recomputable exactly
    worst = 0.0
    for fr in default_run.folds:
        for variant, means in fr.means.items():
            rows = [e for e in fr.trip_evals if e.variant == variant]
            for metric, key in (("rmse", "rmse"), ("mae", "mae"),
                                ("end_ae", "end_ae")):
                direct = float(np.mean([getattr(e, key) for e in rows]))
                worst = max(worst, abs(means[metric] - direct))
    for variant, stats in default_run.overall.items():
        fold_means = [fr.means[variant]["rmse"] for fr in default_run.folds]
        worst = max(worst, abs(stats["rmse"].mean - float(np.mean(fold_means))))
    assert worst <= 1e-12, worst
    print("[PASS] criterion 10: 15-fold partition sound, artifact hash "
          "blind to test perturbation, aggregation identity %.1e <= 1e-12"
          % worst)


# --------------------------------------------------------------------------
# 11: the plausibility model accepts its own samples

def test_criterion_11_abm_self_consistency(default_corpus):
    rates = calibrate_rates(default_corpus)
    coverages = []
    for i, trip in enumerate(default_corpus):
        path = simulate(trip, rates, n_samples=1, seed=70_000 + i,
                        capacity=CAPACITY)[0]
        traj = Trajectory(trip_id=trip.trip_id, traces=(),
                          l_final=tuple(float(v) for v in path))
        rep = audit(traj, trip, rates, n_samples=500, seed=i,
                    capacity=CAPACITY)
        coverages.append(rep.coverage)
    mean_cov = float(np.mean(coverages))
    assert mean_cov >= 0.85, mean_cov

    # per-stop means follow m_k = m_{k-1}(1-p_k) + lam_k when the
    # capacity cap is out of reach
    trip = default_corpus[0]
    out = simulate(trip, rates, n_samples=10_000, seed=7, capacity=1e9)
    m = 0.0
    for k, ev in enumerate(trip.stops):
        lam, p = rates.rates_for(ev.hour_bin, ev.poi_density)
        m = m * (1.0 - p) + lam
        se = out[:, k].std(ddof=1) / math.sqrt(out.shape[0])
        assert abs(out[:, k].mean() - m) < 3.0 * se, (k, out[:, k].mean(), m)
    print("[PASS] criterion 11: self-sampled coverage %.3f >= 0.85 over "
          "%d trips; per-stop means within 3 SE of the recursion"
          % (mean_cov, len(default_corpus)))


# --------------------------------------------------------------------------
# 12: Wasserstein oracle

def test_criterion_12_w1_oracle():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(500):
        atoms = rng.uniform(-20.0, 100.0, size=3)
        point = float(rng.uniform(-20.0, 100.0))
        got = w1_point_mass(atoms, point)
        ref = w1_to_point(atoms, (1.0, 1.0, 1.0), point)
        worst = max(worst, abs(got - ref))
    assert worst <= 1e-12, worst
    print("[PASS] criterion 12: w1_point_mass matches the transport "
          "oracle on 500 3-atom cases (max gap %.2e)" % worst)


# --------------------------------------------------------------------------
# 13: command-level determinism

def test_criterion_13_cli_determinism(tmp_path):
    corpus = str(tmp_path / "corpus.csv")
    assert main(["synth", "--out", corpus,
                 "--set", "synth.n_trips=40"]) == 0
    fast = ["--set", "model.n_trees=60", "--set", "abm.samples=100",
            "--set", "evaluation.seeds=42"]
    a = tmp_path / "run_a"
    b = tmp_path / "run_b"
    assert main(["eval", "--corpus", corpus, "--out", str(a),
                 "--threads", "1"] + fast) == 0
    assert main(["eval", "--corpus", corpus, "--out", str(b),
                 "--threads", "4"] + fast) == 0
    names = ("effective.ini", "overall.csv", "stress.csv", "folds.csv",
             "trips.csv", "traces.csv", "summary.txt")
    match, mismatch, errors = filecmp.cmpfiles(str(a), str(b), names,
                                               shallow=False)
    assert not mismatch and not errors, (mismatch, errors)
    assert sorted(match) == sorted(names)
    print("[PASS] criterion 13: rerun with different --threads produced "
          "byte-identical %s" % (", ".join(names)))
