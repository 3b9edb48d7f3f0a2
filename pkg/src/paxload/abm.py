"""Generative plausibility audit, decoupled from the estimator.

A small agent model draws boarding/alighting flows per stop from rates
calibrated on training trips, stratified by (hour, semantic label) with
Bayes shrinkage toward the global rates. The resulting Monte Carlo
envelope scores a trajectory's plausibility; it never feeds back into
the state estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import Trajectory, Trip, capacity_value
from .errors import InputError
from .ingest import SemanticClusterer

KAPPA_DEFAULT = 10.0
N_SAMPLES_DEFAULT = 500
SHOCK_W1_THRESHOLD = 10.0
ENVELOPE_LO = 0.05
ENVELOPE_HI = 0.95
# inversion sampling is exact below this rate; normal approximation above
POISSON_INVERSION_MAX = 30.0


@dataclass(frozen=True)
class AbmRates:
    """Per-(hour, label) boarding rate and alighting probability."""

    lam: Dict[Tuple[int, int], float]
    p: Dict[Tuple[int, int], float]
    lam_bar: float
    p_bar: float
    kappa: float
    clusterer: Optional[SemanticClusterer]

    def rates_for(self, hour: int, poi) -> Tuple[float, float]:
        label = self.clusterer.assign(poi) if self.clusterer is not None else 0
        key = (hour, label)
        return (self.lam.get(key, self.lam_bar),
                self.p.get(key, self.p_bar))


def calibrate_rates(training_trips: Sequence[Trip],
                    clusterer: Optional[SemanticClusterer],
                    kappa: float = KAPPA_DEFAULT) -> AbmRates:
    """Shrink per-cell flow statistics toward the global rates.

    lam_cell = (n * mean boardings + kappa * lam_bar) / (n + kappa);
    p_cell uses the alight fraction A / L_prev over stops arriving with
    passengers aboard, same shrinkage, clamped to [0, 1]. Cells with no
    data fall back to the globals entirely.
    """
    if kappa < 0:
        raise InputError("kappa must be >= 0")
    boards: Dict[Tuple[int, int], list] = {}
    fracs: Dict[Tuple[int, int], list] = {}
    all_boards = []
    all_fracs = []
    for trip in training_trips:
        l_prev = 0
        for ev in trip.stops:
            label = (clusterer.assign(ev.poi_density)
                     if clusterer is not None else 0)
            key = (ev.hour_bin, label)
            boards.setdefault(key, []).append(float(ev.mc_board))
            all_boards.append(float(ev.mc_board))
            if l_prev > 0:
                frac = min(ev.mc_alight / l_prev, 1.0)
                fracs.setdefault(key, []).append(frac)
                all_fracs.append(frac)
            l_prev = ev.mc_load
    if not all_boards:
        raise InputError("cannot calibrate rates on empty training trips")
    lam_bar = float(np.mean(all_boards))
    # no arriving-loaded stops means alighting is unobservable
    p_bar = float(np.mean(all_fracs)) if all_fracs else 0.0

    lam = {}
    for key, vals in boards.items():
        n = len(vals)
        lam[key] = (n * float(np.mean(vals)) + kappa * lam_bar) / (n + kappa)
    p = {}
    for key, vals in fracs.items():
        n = len(vals)
        shrunk = (n * float(np.mean(vals)) + kappa * p_bar) / (n + kappa)
        p[key] = min(max(shrunk, 0.0), 1.0)
    return AbmRates(lam=lam, p=p, lam_bar=lam_bar, p_bar=p_bar,
                    kappa=kappa, clusterer=clusterer)


def _poisson_draw(rng: np.random.Generator, lam: float) -> int:
    if lam <= 0.0:
        return 0
    if lam < POISSON_INVERSION_MAX:
        u = rng.random()
        k = 0
        pmf = math.exp(-lam)
        cum = pmf
        # tail cutoff protects against float underflow of the pmf
        while u > cum and k < 400:
            k += 1
            pmf *= lam / k
            cum += pmf
        return k
    return max(0, int(round(rng.normal(lam, math.sqrt(lam)))))


def simulate(trip: Trip, rates: AbmRates,
             n_samples: int = N_SAMPLES_DEFAULT, seed: int = 0,
             capacity=None) -> np.ndarray:
    """Monte Carlo load paths, one row per sample, one column per stop.

    Every path starts empty and applies alight-then-board with the same
    capacity cap as the physical projection, so all paths are feasible.
    Path j draws from its own generator seeded (seed, j), making paths
    independent of execution order.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    cap = capacity_value(capacity)
    stop_rates = [rates.rates_for(ev.hour_bin, ev.poi_density)
                  for ev in trip.stops]
    out = np.zeros((n_samples, len(trip.stops)))
    for j in range(n_samples):
        rng = np.random.default_rng((seed, j))
        load = 0
        for k, (lam, p) in enumerate(stop_rates):
            alight = int(rng.binomial(load, p)) if load > 0 else 0
            board = _poisson_draw(rng, lam)
            room = int(math.floor(cap - (load - alight) + 1e-9))
            load = load - alight + min(board, room)
            out[j, k] = load
    return out


def w1_point_mass(samples, point: float) -> float:
    """Transport cost between an empirical sample and a single point."""
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise InputError("w1_point_mass needs at least one sample")
    return float(np.mean(np.abs(arr - float(point))))


@dataclass(frozen=True)
class AuditReport:
    trip_id: str
    w1: Tuple[float, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    coverage: float
    shocks: Tuple[bool, ...]


def audit(trajectory: Trajectory, trip: Trip, rates: AbmRates,
          n_samples: int = N_SAMPLES_DEFAULT, seed: int = 0,
          capacity=None,
          shock_w1_threshold: float = SHOCK_W1_THRESHOLD) -> AuditReport:
    """Score a trajectory against the simulated envelope.

    A stop is covered when its final state lies inside the 5th..95th
    percentile band; a shock needs both an excursion outside the band
    and a W1 above the threshold, so mild boundary grazes do not flag.
    """
    if len(trajectory.l_final) != len(trip.stops):
        raise InputError("trajectory and trip disagree on stop count "
                         "(%d vs %d)" % (len(trajectory.l_final),
                                         len(trip.stops)))
    samples = simulate(trip, rates, n_samples, seed, capacity)
    w1 = []
    lower = []
    upper = []
    shocks = []
    inside_count = 0
    for k, l in enumerate(trajectory.l_final):
        col = samples[:, k]
        score = w1_point_mass(col, l)
        lo, hi = np.quantile(col, (ENVELOPE_LO, ENVELOPE_HI))
        inside = bool(lo <= l <= hi)
        inside_count += inside
        w1.append(score)
        lower.append(float(lo))
        upper.append(float(hi))
        shocks.append(bool(not inside and score > shock_w1_threshold))
    return AuditReport(
        trip_id=trajectory.trip_id,
        w1=tuple(w1),
        lower=tuple(lower),
        upper=tuple(upper),
        coverage=inside_count / len(trajectory.l_final),
        shocks=tuple(shocks),
    )
