"""Synthetic transit corpora with known ground truth and controlled noise.

The truth process is the same Poisson/Binomial family the audit module
calibrates: boardings are Poisson draws scaled by an hour profile and the
stop's archetype, alightings are Binomial thinnings of the current load,
and alight-before-board capacity feasibility is enforced, so every
generated trip satisfies conservation and the [0, C] bound by
construction.

Observation channels are then corrupted independently of the truth:
  * APC counts get per-passenger miscounts, additive boarding spikes, and
    an optional trip-level cold start (the counter misses every boarding
    at the first few stops, which drifts the flow-integrated trajectory
    parallel to the truth).
  * Device counts (wifi) are missing at random, and where present follow
    round(load / rho_true(hour)) with multiplicative lognormal noise.
    Occasionally the scanner fades mid-service and misses a chunk of
    devices, which collapses that stop's count toward zero and turns the
    anchor into a low outlier.

Generation is independently seeded per trip, so corpora are bit-identical
across runs and insensitive to trip count changes upstream of a trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .core import Capacity, StopEvent, Trip, validate_trip
from .errors import CorpusInvariantError, InputError

_ROUTE_STREAM = 987654321  # rng tag for route-level draws (never a trip index)

_DEFAULT_HOUR_PROFILE = (
    0.20, 0.15, 0.10, 0.10, 0.15, 0.35,
    0.70, 1.20, 1.60, 1.10, 0.80, 0.90,
    1.00, 0.90, 0.90, 1.10, 1.30, 1.60,
    1.30, 0.90, 0.60, 0.45, 0.35, 0.25,
)

_DEFAULT_DEVICE_RATIO = tuple(
    round(1.4 + 0.7 * math.sin(2.0 * math.pi * (h - 7) / 24.0), 4) for h in range(24)
)

# archetype templates over six POI categories; rows are archetypes
_POI_TEMPLATES = np.array([
    [8.0, 1.0, 1.0, 1.0, 0.5, 0.5],   # residential
    [1.0, 8.0, 2.0, 0.5, 0.5, 1.0],   # office
    [1.0, 2.0, 8.0, 1.0, 1.0, 0.5],   # retail
    [0.5, 1.0, 1.0, 8.0, 2.0, 2.0],   # interchange
    [4.0, 4.0, 1.0, 1.0, 4.0, 0.5],   # mixed
    [2.0, 1.0, 4.0, 1.0, 1.0, 4.0],   # leisure
])

_BOARD_FACTOR = (1.25, 0.85, 1.00, 1.15, 1.05, 0.95)
_ALIGHT_FACTOR = (0.80, 1.25, 1.00, 0.90, 1.00, 1.10)


@dataclass(frozen=True)
class SynthConfig:
    n_trips: int = 200
    stops_min: int = 17
    stops_max: int = 33
    n_route_stops: int = 40
    stop_type_count: int = 4
    seed: int = 1234
    capacity: float = 80.0
    demand_scale: float = 8.0
    hour_profile: Tuple[float, ...] = _DEFAULT_HOUR_PROFILE
    device_ratio_per_hour: Tuple[float, ...] = _DEFAULT_DEVICE_RATIO
    miscount_prob: float = 0.18         # per passenger, split between over/under
    spike_prob: float = 0.05            # per stop, boarding channel
    spike_mag_min: int = 10
    spike_mag_max: int = 35
    cold_start_prob: float = 0.25       # per trip
    cold_start_stops_min: int = 2
    cold_start_stops_max: int = 5
    wifi_missing_prob: float = 0.25
    anchor_sigma: float = 0.15          # lognormal sigma of device-count noise
    wifi_fade_prob: float = 0.04        # per anchored stop, scanner misses devices
    wifi_fade_devices_min: int = 25
    wifi_fade_devices_max: int = 50
    precip_prob: float = 0.15

    def __post_init__(self):
        if self.n_trips < 1:
            raise InputError("n_trips must be >= 1")
        if not (1 <= self.stops_min <= self.stops_max <= self.n_route_stops):
            raise InputError("need 1 <= stops_min <= stops_max <= n_route_stops")
        if self.stop_type_count < 2 or self.stop_type_count > len(_POI_TEMPLATES):
            raise InputError("stop_type_count must be in [2, %d]" % len(_POI_TEMPLATES))
        if len(self.hour_profile) != 24 or len(self.device_ratio_per_hour) != 24:
            raise InputError("hour_profile and device_ratio_per_hour need 24 entries")
        if any(p < 0 for p in self.hour_profile) or sum(self.hour_profile[5:23]) <= 0:
            raise InputError("hour_profile must be nonnegative with daytime demand")
        if any(r < 0.1 or r > 5.0 for r in self.device_ratio_per_hour):
            raise InputError("device ratios must lie in [0.1, 5.0]")
        for p in (self.miscount_prob, self.spike_prob, self.cold_start_prob,
                  self.wifi_missing_prob, self.wifi_fade_prob, self.precip_prob):
            if not (0.0 <= p <= 1.0):
                raise InputError("probabilities must lie in [0, 1]")
        if self.anchor_sigma < 0.0:
            raise InputError("anchor_sigma must be >= 0")
        if not (0 <= self.wifi_fade_devices_min <= self.wifi_fade_devices_max):
            raise InputError("need 0 <= wifi_fade_devices_min <= wifi_fade_devices_max")
        if self.capacity <= 0:
            raise InputError("capacity must be positive")


@dataclass(frozen=True)
class SynthTruth:
    """Latent generator state exposed for validation, never for training."""

    stop_archetype: Dict[str, int]
    stop_poi: Dict[str, Tuple[float, ...]]
    rho_true: Tuple[float, ...]


@dataclass(frozen=True)
class TripSummary:
    trip_id: str
    n_stops: int
    max_load: int
    end_load: int


def _route_layout(cfg: SynthConfig):
    rng = np.random.default_rng((cfg.seed, _ROUTE_STREAM))
    arch = rng.integers(0, cfg.stop_type_count, cfg.n_route_stops)
    # make sure every archetype actually occurs on the route
    arch[:cfg.stop_type_count] = np.arange(cfg.stop_type_count)
    poi = {}
    arche = {}
    for s in range(cfg.n_route_stops):
        sid = "s%03d" % s
        a = int(arch[s])
        vec = np.maximum(_POI_TEMPLATES[a] + rng.normal(0.0, 0.7, 6), 0.0)
        poi[sid] = tuple(float(v) for v in vec)
        arche[sid] = a
    return arche, poi


def _expected_means(lams, ps):
    m = 0.0
    out = []
    for lam, p in zip(lams, ps):
        m = m * (1.0 - p) + lam
        out.append(m)
    return out


def _generate_trip(cfg: SynthConfig, i: int, arche, poi) -> Trip:
    rng = np.random.default_rng((cfg.seed, i))
    tid = "t%04d" % i
    n = int(rng.integers(cfg.stops_min, cfg.stops_max + 1))
    day = int(rng.integers(0, 28))

    hours = np.arange(5, 23)
    weights = np.array([cfg.hour_profile[h] for h in hours], dtype=float)
    start_h = int(rng.choice(hours, p=weights / weights.sum()))
    start_ts = day * 86400.0 + start_h * 3600.0 + float(rng.integers(0, 3600))

    precip = 1 if rng.random() < cfg.precip_prob else 0
    cold_start = rng.random() < cfg.cold_start_prob
    f_cold = int(rng.integers(cfg.cold_start_stops_min, cfg.cold_start_stops_max + 1)) \
        if cold_start else 0

    ts = start_ts
    timestamps, hour_bins, stop_ids = [], [], []
    lams, ps, prior_lams = [], [], []
    for k in range(n):
        sid = "s%03d" % k
        stop_ids.append(sid)
        timestamps.append(ts)
        h = int(ts // 3600) % 24
        hour_bins.append(h)
        a = arche[sid]
        t_pos = k / max(n - 1, 1)
        lam = cfg.demand_scale * cfg.hour_profile[h] * _BOARD_FACTOR[a] \
            * max(1.30 - 1.05 * t_pos, 0.0)
        p_al = min(0.90, _ALIGHT_FACTOR[a] * (0.05 + 0.75 * t_pos ** 1.6))
        prior_lams.append(lam)
        lams.append(lam * (1.0 - 0.12 * precip))
        ps.append(p_al)
        ts += float(rng.integers(100, 161))
    prior_means = _expected_means(prior_lams, ps)

    c = cfg.capacity
    events = []
    load = 0
    for k in range(n):
        a_true = int(rng.binomial(load, ps[k])) if load > 0 else 0
        room = int(c) - (load - a_true)
        b_true = min(int(rng.poisson(lams[k])), room)
        load = load - a_true + b_true

        # APC corruption
        b_base = 0 if (cold_start and k < f_cold) else b_true
        under_b = int(rng.binomial(b_base, cfg.miscount_prob / 2.0)) if b_base else 0
        over_b = int(rng.binomial(b_base, cfg.miscount_prob / 2.0)) if b_base else 0
        apc_b = b_base - under_b + over_b
        under_a = int(rng.binomial(a_true, cfg.miscount_prob / 2.0)) if a_true else 0
        over_a = int(rng.binomial(a_true, cfg.miscount_prob / 2.0)) if a_true else 0
        apc_a = a_true - under_a + over_a
        if rng.random() < cfg.spike_prob:
            apc_b += int(rng.integers(cfg.spike_mag_min, cfg.spike_mag_max + 1))

        # device-count anchor channel
        if rng.random() < cfg.wifi_missing_prob:
            wifi, valid = None, 0
        else:
            rho = cfg.device_ratio_per_hour[hour_bins[k]]
            noise = math.exp(cfg.anchor_sigma * rng.standard_normal()) \
                if cfg.anchor_sigma > 0 else 1.0
            wifi = max(int(round(load / rho * noise)), 0)
            # both draws happen unconditionally so corpora that differ only
            # in fade probability share every other stream
            fade_u = rng.random()
            fade_n = int(rng.integers(cfg.wifi_fade_devices_min,
                                      cfg.wifi_fade_devices_max + 1))
            if fade_u < cfg.wifi_fade_prob:
                wifi = max(wifi - fade_n, 0)
            valid = 1

        h = hour_bins[k]
        temp = 12.0 + 9.0 * math.sin(2.0 * math.pi * (h - 9) / 24.0) \
            + rng.normal(0.0, 1.5)
        events.append(StopEvent(
            trip_id=tid,
            stop_index=k,
            stop_id=stop_ids[k],
            timestamp=timestamps[k],
            hour_bin=h,
            apc_board_raw=apc_b,
            apc_alight_raw=apc_a,
            mc_board=b_true,
            mc_alight=a_true,
            mc_load=load,
            wifi_count=wifi,
            wifi_valid=valid,
            weather=(float(temp), float(precip)),
            occupancy_prior=float(prior_means[k]),
            poi_density=poi[stop_ids[k]],
        ))
    return Trip(trip_id=tid, stops=tuple(events))


def build_corpus(cfg: SynthConfig) -> Tuple[List[Trip], SynthTruth]:
    """Generate trips plus the latent truth needed to validate them."""
    arche, poi = _route_layout(cfg)
    trips = [_generate_trip(cfg, i, arche, poi) for i in range(cfg.n_trips)]
    return trips, SynthTruth(stop_archetype=arche, stop_poi=poi,
                             rho_true=tuple(cfg.device_ratio_per_hour))


def generate_corpus(cfg: SynthConfig) -> List[Trip]:
    return build_corpus(cfg)[0]


def label_ground_truth_consistency(trips: List[Trip],
                                   capacity=None) -> List[TripSummary]:
    """Verify conservation and bounds of every trip's recorded truth.

    Returns one summary per trip; raises CorpusInvariantError naming the
    first offending trip and stop if any invariant is broken.
    """
    if not trips:
        raise InputError("empty corpus")
    summaries = []
    for trip in trips:
        cap = capacity if capacity is not None else Capacity(80.0)
        validate_trip(trip, cap)
        loads = [ev.mc_load for ev in trip.stops]
        summaries.append(TripSummary(
            trip_id=trip.trip_id,
            n_stops=len(trip.stops),
            max_load=max(loads),
            end_load=loads[-1],
        ))
    return summaries
