"""Repeated trip-grouped cross-validation and the six-method ablation.

Each (seed, fold) job fits every train-only artifact from the fold's
training trips, runs all method variants on the fold's test trips, and
reports per-trip metrics that are aggregated fold-first. All randomness
is derived from (seed, fold, purpose) so any single job reruns
bit-identically in isolation, which also makes results independent of
worker count.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .abm import calibrate_rates, audit
from .core import Trajectory, Trip, capacity_value, \
    shadow_infeasibility_rate, shadow_trajectory
from .engine import (
    FIXED_FUSION,
    PERCEPTION_ONLY,
    PHYS_ONLY,
    RULE_FUSION,
    raw_state_series,
    run_trip,
)
from .errors import ContractViolation, InputError
from .fusion import TrustParams
from .ingest import ContextBuilder, OccupancyPrior, fit_anchor_map, fit_semantics
from .macro import ReweightParams, ShiftGateParams, apply_shift, \
    closed_loop_refit, shift_gate
from .perception import ForestParams
from .projection import RESIDUAL_EPS, project

DEFAULT_SEEDS = (42, 123, 999)
MIN_BAD_TRIPS_FOR_STRESS = 3
GATING_ALPHA = 0.75   # an anchored stop counts as gated when alpha exceeds this

# purpose tags for sub-seed derivation
SEED_SEMANTICS = 1
SEED_FOREST = 2
SEED_ABM = 3

# (name, table label, which fitted model, engine variant, shift probe on)
VARIANT_ROWS = (
    ("perception_only", "Perception-only (open-loop)",
     "unit", PERCEPTION_ONLY, False),
    ("phys_only", "No fusion (phys-only)",
     "reweighted", PHYS_ONLY, False),
    ("fixed_fusion", "Fixed fusion (alpha0=0.5)",
     "reweighted", FIXED_FUSION, False),
    ("no_reweight", "No reweight (rule; no shift)",
     "unit", RULE_FUSION, False),
    ("with_shift", "With shift probe",
     "reweighted", RULE_FUSION, True),
    ("proposed", "Proposed: rule fusion (no shift)",
     "reweighted", RULE_FUSION, False),
)
VARIANT_NAMES = tuple(row[0] for row in VARIANT_ROWS)
VARIANT_LABELS = {row[0]: row[1] for row in VARIANT_ROWS}


def derive_seed(seed: int, fold_index: int, purpose: int, extra: int = 0) -> int:
    """Stable sub-seed so each randomized component reruns in isolation."""
    ss = np.random.SeedSequence((seed, fold_index, purpose, extra))
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# split plan

@dataclass(frozen=True)
class Fold:
    seed: int
    fold_index: int
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    seeds: Tuple[int, ...]
    n_folds: int
    folds: Tuple[Fold, ...]


def make_splits(trip_ids: Sequence[str],
                seeds: Sequence[int] = DEFAULT_SEEDS,
                n_folds: int = 5) -> SplitPlan:
    """Shuffle-then-chunk trip-grouped folds, remainder to the first folds."""
    ids = sorted(set(trip_ids))
    if len(ids) != len(list(trip_ids)):
        raise InputError("trip ids must be unique")
    if len(ids) < n_folds:
        raise InputError("need at least %d trips, have %d" % (n_folds, len(ids)))
    folds = []
    for seed in seeds:
        perm = np.random.default_rng(seed).permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        base, rem = divmod(len(ids), n_folds)
        start = 0
        chunks = []
        for f in range(n_folds):
            size = base + (1 if f < rem else 0)
            chunks.append(tuple(shuffled[start:start + size]))
            start += size
        for f in range(n_folds):
            train = tuple(t for g in range(n_folds) if g != f for t in chunks[g])
            folds.append(Fold(seed=seed, fold_index=f,
                              train_ids=train, test_ids=chunks[f]))
    return SplitPlan(seeds=tuple(seeds), n_folds=n_folds, folds=tuple(folds))


# ---------------------------------------------------------------------------
# metrics

def trip_metrics(estimates: Sequence[float],
                 truth: Sequence[float]) -> Tuple[float, float, float]:
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.shape != ref.shape or est.ndim != 1 or est.size == 0:
        raise InputError("metric series must be equal-length and non-empty")
    err = est - ref
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    return rmse, mae, float(abs(err[-1]))


def apc_inconsistency_rate(trip: Trip, capacity=None) -> float:
    """Fraction of stops the raw APC counts cannot explain physically."""
    cap = capacity_value(capacity)
    state = 0.0
    bad = 0
    for ev in trip.stops:
        _, _, state, e = project(state, float(ev.apc_board_raw),
                                 float(ev.apc_alight_raw), cap)
        bad += e > RESIDUAL_EPS
    return bad / len(trip.stops)


def fit_tau_bad(train_trips: Sequence[Trip], capacity=None,
                q: float = 0.75) -> float:
    """Nearest-rank training quantile of the APC inconsistency rate."""
    if not train_trips:
        raise InputError("fit_tau_bad needs at least one training trip")
    if not 0.0 < q <= 1.0:
        raise InputError("quantile must be in (0, 1]")
    rates = sorted(apc_inconsistency_rate(t, capacity) for t in train_trips)
    rank = min(max(math.ceil(q * len(rates)), 1), len(rates))
    return rates[rank - 1]


def apc_bad_label(trip: Trip, tau_bad: float, capacity=None) -> bool:
    return apc_inconsistency_rate(trip, capacity) > tau_bad


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class MatrixConfig:
    """Every knob of the evaluation protocol, with contract defaults."""

    capacity: float = 80.0
    seeds: Tuple[int, ...] = DEFAULT_SEEDS
    n_folds: int = 5
    variants: Tuple[str, ...] = VARIANT_NAMES
    # flow predictor
    n_trees: int = 200
    max_depth: int = 12
    min_samples_leaf: int = 2
    n_bins: int = 32
    # trust rule
    s_d: float = 15.0
    s_e: float = 5.0
    alpha0: float = 0.5
    # reweighting
    reweight_lambda: float = 0.5
    omega_max: float = 5.0
    # shift probe (used by the with_shift row only)
    min_anchor_fraction: float = 0.5
    shift_mean_threshold: float = 5.0
    shift_std_threshold: float = 4.0
    # semantics
    kmeans_k: int = 4
    poi_radius: int = 300
    # stress labeling
    tau_bad_quantile: float = 0.75
    # plausibility audit
    abm_kappa: float = 10.0
    abm_samples: int = 500
    shock_w1_threshold: float = 10.0
    abm_in_matrix: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.n_folds < 2:
            raise InputError("n_folds must be >= 2")
        if not self.seeds:
            raise InputError("need at least one seed")
        unknown = set(self.variants) - set(VARIANT_NAMES)
        if unknown:
            raise InputError("unknown variants: %s" % ", ".join(sorted(unknown)))
        if self.threads < 1:
            raise InputError("threads must be >= 1")

    def forest_params(self, seed: int) -> ForestParams:
        return ForestParams(n_trees=self.n_trees, max_depth=self.max_depth,
                            min_samples_leaf=self.min_samples_leaf,
                            seed=seed, n_bins=self.n_bins)

    def trust_params(self) -> TrustParams:
        return TrustParams(s_d=self.s_d, s_e=self.s_e, alpha0=self.alpha0)

    def reweight_params(self) -> ReweightParams:
        return ReweightParams(lam=self.reweight_lambda,
                              omega_max=self.omega_max)

    def shift_params(self) -> ShiftGateParams:
        return ShiftGateParams(min_anchor_fraction=self.min_anchor_fraction,
                               mean_threshold=self.shift_mean_threshold,
                               std_threshold=self.shift_std_threshold)


# ---------------------------------------------------------------------------
# per-fold artifacts

@dataclass
class FoldArtifacts:
    clusterer: object
    occupancy: OccupancyPrior
    builder: ContextBuilder
    anchor_map: object
    unit_model: object
    reweighted_model: object
    weights: np.ndarray
    tau_bad: float
    abm_rates: object
    train_ids: frozenset


def fit_fold(train_trips: Sequence[Trip], cfg: MatrixConfig,
             seed: int, fold_index: int) -> FoldArtifacts:
    """Fit every train-only artifact for one (seed, fold) job."""
    clusterer = fit_semantics(
        train_trips, k=cfg.kmeans_k, radius=cfg.poi_radius,
        seed=derive_seed(seed, fold_index, SEED_SEMANTICS))
    occupancy = OccupancyPrior.fit(train_trips)
    builder = ContextBuilder.fit(train_trips, clusterer, occupancy)
    anchor_map = fit_anchor_map(train_trips)
    unit_model, reweighted_model, weights = closed_loop_refit(
        train_trips, builder, anchor_map,
        forest_params=cfg.forest_params(
            derive_seed(seed, fold_index, SEED_FOREST)),
        reweight_params=cfg.reweight_params(),
        trust_params=cfg.trust_params(),
        capacity=cfg.capacity)
    tau_bad = fit_tau_bad(train_trips, cfg.capacity, cfg.tau_bad_quantile)
    abm_rates = calibrate_rates(train_trips, clusterer, cfg.abm_kappa)
    return FoldArtifacts(
        clusterer=clusterer, occupancy=occupancy, builder=builder,
        anchor_map=anchor_map, unit_model=unit_model,
        reweighted_model=reweighted_model, weights=weights,
        tau_bad=tau_bad, abm_rates=abm_rates,
        train_ids=frozenset(t.trip_id for t in train_trips))


def artifact_digest(art: FoldArtifacts) -> str:
    """One hash over every fitted artifact; leakage shows up as a change."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(art.clusterer.centroids).tobytes())
    h.update(repr(art.clusterer.radius).encode())
    h.update(repr((art.anchor_map.rho, art.anchor_map.rho_bar,
                   art.anchor_map.usable)).encode())
    h.update(repr(sorted(art.occupancy.table.items())).encode())
    h.update(repr(art.occupancy.route_mean).encode())
    h.update(repr(art.builder.weather_means).encode())
    h.update(art.unit_model.state_bytes())
    h.update(art.reweighted_model.state_bytes())
    h.update(repr(art.tau_bad).encode())
    h.update(repr((sorted(art.abm_rates.lam.items()),
                   sorted(art.abm_rates.p.items()),
                   art.abm_rates.lam_bar, art.abm_rates.p_bar,
                   art.abm_rates.kappa)).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# fold evaluation

@dataclass
class TripEval:
    trip_id: str
    variant: str
    n_stops: int
    rmse: float
    mae: float
    end_ae: float
    raw_rmse: Optional[float]      # unclamped-series RMSE, open-loop row only
    shadow_rate: float
    ephys_rate: float
    cum_ephys: float
    gating_freq: float
    shift_fired: bool
    shift_delta: float
    apc_bad: bool
    abm_coverage: Optional[float] = None
    abm_w1: Optional[float] = None
    abm_shocks: Optional[int] = None


FOLD_MEAN_FIELDS = ("rmse", "mae", "end_ae", "shadow_rate", "ephys_rate",
                    "shift_rate")


@dataclass
class FoldReport:
    seed: int
    fold_index: int
    tau_bad: float
    artifact_hash: str
    trip_evals: List[TripEval]
    means: Dict[str, Dict[str, float]]          # variant -> metric -> value
    stress_means: Dict[str, Dict[str, float]]   # over APC-bad trips only
    n_bad: int
    bad_trip_ids: Tuple[str, ...]
    abm_coverage: Optional[float]
    abm_w1: Optional[float]
    # open-loop infeasibility of raw flow proposals on the trips the fold
    # trained on, before and after the residual-weighted refit
    train_shadow_unit: float = math.nan
    train_shadow_reweighted: float = math.nan
    proposed_trajectories: Dict[str, Trajectory] = field(default_factory=dict)


def _train_shadow_rate(model, contexts, cap) -> float:
    rates = []
    for ctx in contexts:
        b_hats, a_hats = model.predict(ctx)
        rates.append(shadow_infeasibility_rate(
            shadow_trajectory(b_hats, a_hats), cap))
    return float(np.mean(rates))


def _fold_means(evals: List[TripEval]) -> Dict[str, float]:
    return {
        "rmse": float(np.mean([e.rmse for e in evals])),
        "mae": float(np.mean([e.mae for e in evals])),
        "end_ae": float(np.mean([e.end_ae for e in evals])),
        "shadow_rate": float(np.mean([e.shadow_rate for e in evals])),
        "ephys_rate": float(np.mean([e.ephys_rate for e in evals])),
        "shift_rate": float(np.mean([1.0 if e.shift_fired else 0.0
                                     for e in evals])),
    }


def evaluate_fold(trips_by_id: Dict[str, Trip], fold: Fold,
                  cfg: MatrixConfig) -> FoldReport:
    overlap = set(fold.train_ids) & set(fold.test_ids)
    if overlap:
        raise ContractViolation("train/test overlap: %s" % sorted(overlap))
    train = [trips_by_id[t] for t in fold.train_ids]
    test = [trips_by_id[t] for t in fold.test_ids]
    art = fit_fold(train, cfg, fold.seed, fold.fold_index)
    fold_hash = artifact_digest(art)

    trust = cfg.trust_params()
    shift_params = cfg.shift_params()
    cap = cfg.capacity
    models = {"unit": art.unit_model, "reweighted": art.reweighted_model}
    active = [row for row in VARIANT_ROWS if row[0] in cfg.variants]

    # did the refit actually tame open-loop drift where it saw the residuals?
    train_contexts = [art.builder.build(t) for t in train]
    train_shadow_unit = _train_shadow_rate(art.unit_model, train_contexts, cap)
    train_shadow_rw = _train_shadow_rate(art.reweighted_model,
                                         train_contexts, cap)

    # one context build and one prediction per model for the whole fold
    contexts = {t.trip_id: art.builder.build(t) for t in test}
    proposals: Dict[str, Dict[str, tuple]] = {}
    for key in {row[2] for row in active}:
        model = models[key]
        proposals[key] = {t.trip_id: model.predict(contexts[t.trip_id])
                          for t in test}
    trip_evals: List[TripEval] = []
    proposed_trajs: Dict[str, Trajectory] = {}
    sorted_test_ids = sorted(fold.test_ids)
    abm_seed_of = {tid: derive_seed(fold.seed, fold.fold_index, SEED_ABM, i)
                   for i, tid in enumerate(sorted_test_ids)}

    for trip in test:
        truth = [float(ev.mc_load) for ev in trip.stops]
        bad = apc_bad_label(trip, art.tau_bad, cap)
        for name, _, model_key, engine_variant, probe in active:
            traj = run_trip(trip, None, None, art.anchor_map, trust, cap,
                            engine_variant,
                            proposals=proposals[model_key][trip.trip_id])
            fired, delta = 0, 0.0
            if probe:
                fired, delta = shift_gate(traj, shift_params)
                traj = apply_shift(traj, fired, delta, cap)

            rmse, mae, end_ae = trip_metrics(traj.l_final, truth)
            raw_rmse = None
            if engine_variant == PERCEPTION_ONLY:
                raw_rmse = trip_metrics(raw_state_series(traj), truth)[0]
            anchored = [t for t in traj.traces if t.anchor is not None]
            gated = sum(1 for t in anchored if t.alpha > GATING_ALPHA)
            ev = TripEval(
                trip_id=trip.trip_id, variant=name, n_stops=len(trip.stops),
                rmse=rmse, mae=mae, end_ae=end_ae, raw_rmse=raw_rmse,
                shadow_rate=shadow_infeasibility_rate(
                    raw_state_series(traj), cap),
                ephys_rate=float(np.mean([t.e_phys > RESIDUAL_EPS
                                          for t in traj.traces])),
                cum_ephys=float(sum(t.e_phys for t in traj.traces)),
                gating_freq=gated / len(trip.stops),
                shift_fired=bool(fired), shift_delta=delta, apc_bad=bad)
            if name == "proposed":
                proposed_trajs[trip.trip_id] = traj
                if cfg.abm_in_matrix:
                    report = audit(traj, trip, art.abm_rates,
                                   cfg.abm_samples,
                                   abm_seed_of[trip.trip_id], cap,
                                   cfg.shock_w1_threshold)
                    ev.abm_coverage = report.coverage
                    ev.abm_w1 = float(np.mean(report.w1))
                    ev.abm_shocks = int(sum(report.shocks))
            trip_evals.append(ev)

    means = {}
    stress_means = {}
    for name, _, _, _, _ in active:
        per_variant = [e for e in trip_evals if e.variant == name]
        means[name] = _fold_means(per_variant)
        bad_evals = [e for e in per_variant if e.apc_bad]
        if bad_evals:
            stress_means[name] = _fold_means(bad_evals)
    bad_ids = tuple(sorted({e.trip_id for e in trip_evals if e.apc_bad}))

    coverages = [e.abm_coverage for e in trip_evals
                 if e.abm_coverage is not None]
    w1s = [e.abm_w1 for e in trip_evals if e.abm_w1 is not None]
    return FoldReport(
        seed=fold.seed, fold_index=fold.fold_index, tau_bad=art.tau_bad,
        artifact_hash=fold_hash, trip_evals=trip_evals, means=means,
        stress_means=stress_means, n_bad=len(bad_ids), bad_trip_ids=bad_ids,
        abm_coverage=float(np.mean(coverages)) if coverages else None,
        abm_w1=float(np.mean(w1s)) if w1s else None,
        train_shadow_unit=train_shadow_unit,
        train_shadow_reweighted=train_shadow_rw,
        proposed_trajectories=proposed_trajs)


# ---------------------------------------------------------------------------
# run aggregation

@dataclass
class AggregateStat:
    mean: float
    std: float
    n: int


@dataclass
class RunReport:
    config: MatrixConfig
    folds: List[FoldReport]
    overall: Dict[str, Dict[str, AggregateStat]]
    stress: Dict[str, Dict[str, AggregateStat]]
    n_stress_folds: int


def _aggregate(rows: List[Dict[str, float]]) -> Dict[str, AggregateStat]:
    out = {}
    for metric in FOLD_MEAN_FIELDS:
        vals = np.array([r[metric] for r in rows])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[metric] = AggregateStat(mean=float(vals.mean()), std=std,
                                    n=int(vals.size))
    return out


def run_ablation_matrix(trips: Sequence[Trip],
                        cfg: MatrixConfig = MatrixConfig()) -> RunReport:
    """The full evaluation: every fold of every seed, every variant."""
    trips_by_id = {t.trip_id: t for t in trips}
    if len(trips_by_id) != len(trips):
        raise InputError("duplicate trip ids in corpus")
    plan = make_splits(sorted(trips_by_id), cfg.seeds, cfg.n_folds)

    def job(fold: Fold) -> FoldReport:
        return evaluate_fold(trips_by_id, fold, cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            fold_reports = list(pool.map(job, plan.folds))
    else:
        fold_reports = [job(f) for f in plan.folds]

    overall = {}
    stress = {}
    stress_folds = [fr for fr in fold_reports
                    if fr.n_bad >= MIN_BAD_TRIPS_FOR_STRESS]
    for name in cfg.variants:
        overall[name] = _aggregate([fr.means[name] for fr in fold_reports])
        rows = [fr.stress_means[name] for fr in stress_folds
                if name in fr.stress_means]
        if rows:
            stress[name] = _aggregate(rows)
    return RunReport(config=cfg, folds=fold_reports, overall=overall,
                     stress=stress, n_stress_folds=len(stress_folds))
