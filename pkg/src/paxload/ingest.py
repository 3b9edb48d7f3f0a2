"""Stream alignment and train-side feature fitting.

Everything fitted here (semantic clusterer, anchor map, occupancy prior,
weather imputation stats) is fitted on training trips only. The context
builder has no access to anchor values by construction: it reads raw APC
counts, time, semantics, weather and the occupancy prior, never wifi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import StopEvent, Trip
from .errors import ContractViolation, InputError

ANCHOR_RATIO_MIN = 0.1
ANCHOR_RATIO_MAX = 5.0
DEFAULT_TOLERANCE_S = 60.0
SECONDS_PER_DAY = 86400.0


# ---------------------------------------------------------------------------
# stream alignment

@dataclass(frozen=True)
class BackboneRecord:
    """One stop arrival on the vehicle-location backbone.

    Carries the per-stop metadata and the manual-count reference channel;
    APC and wifi readings arrive as separate streams and are attached by
    timestamp.
    """

    trip_id: str
    stop_index: int
    stop_id: str
    timestamp: float
    hour_bin: int
    mc_board: int
    mc_alight: int
    mc_load: int
    weather: Tuple[float, ...] = ()
    occupancy_prior: float = 0.0
    poi_density: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ApcRecord:
    trip_id: str
    timestamp: float
    board: int
    alight: int


@dataclass(frozen=True)
class WifiRecord:
    trip_id: str
    timestamp: float
    count: int


@dataclass
class AlignmentReport:
    apc_attached: int = 0
    apc_dropped: int = 0
    wifi_attached: int = 0
    wifi_dropped: int = 0
    unparseable: int = 0


def _usable_record(rec) -> bool:
    if not math.isfinite(rec.timestamp):
        return False
    if isinstance(rec, ApcRecord):
        return rec.board >= 0 and rec.alight >= 0
    return rec.count >= 0


def _attach(stop_times, records, tolerance):
    """Pick at most one record per stop: nearest timestamp, tie -> earlier.

    Returns (assignment dict stop_pos -> record, n_dropped). Records whose
    nearest stop is already taken by a closer record are dropped, not
    cascaded.
    """
    best: Dict[int, object] = {}
    dropped = 0
    for rec in records:
        gaps = [abs(rec.timestamp - t) for t in stop_times]
        pos = min(range(len(gaps)), key=lambda i: (gaps[i], stop_times[i]))
        if gaps[pos] > tolerance:
            dropped += 1
            continue
        cur = best.get(pos)
        if cur is None:
            best[pos] = rec
            continue
        cur_gap = abs(cur.timestamp - stop_times[pos])
        if (gaps[pos], rec.timestamp) < (cur_gap, cur.timestamp):
            best[pos] = rec
        dropped += 1
    return best, dropped


def align(backbone: Sequence[BackboneRecord],
          apc_records: Sequence[ApcRecord] = (),
          wifi_records: Sequence[WifiRecord] = (),
          tolerance_seconds: float = DEFAULT_TOLERANCE_S,
          ) -> Tuple[List[Trip], AlignmentReport]:
    """Attach APC and wifi streams onto the stop-event backbone.

    Each stop takes at most one record per stream; candidates outside the
    tolerance window are dropped and counted. A stop with no APC record
    reports zero raw counts; a stop with no wifi record is marked invalid.
    Conservation breaks in the manual counts are warned about, not fatal:
    the backbone is real data here, not generator output.
    """
    if tolerance_seconds < 0:
        raise InputError("tolerance_seconds must be >= 0")
    report = AlignmentReport()

    by_trip: Dict[str, List[BackboneRecord]] = {}
    for row in backbone:
        if not math.isfinite(row.timestamp) or min(
                row.mc_board, row.mc_alight, row.mc_load) < 0:
            report.unparseable += 1
            continue
        by_trip.setdefault(row.trip_id, []).append(row)

    apc_by_trip: Dict[str, List[ApcRecord]] = {}
    for rec in apc_records:
        if not _usable_record(rec):
            report.unparseable += 1
        else:
            apc_by_trip.setdefault(rec.trip_id, []).append(rec)
    wifi_by_trip: Dict[str, List[WifiRecord]] = {}
    for rec in wifi_records:
        if not _usable_record(rec):
            report.unparseable += 1
        else:
            wifi_by_trip.setdefault(rec.trip_id, []).append(rec)

    # sensor records naming a trip with no backbone rows have nothing to
    # attach to
    for tid, recs in apc_by_trip.items():
        if tid not in by_trip:
            report.apc_dropped += len(recs)
    for tid, recs in wifi_by_trip.items():
        if tid not in by_trip:
            report.wifi_dropped += len(recs)

    trips = []
    for tid in sorted(by_trip):
        rows = sorted(by_trip[tid], key=lambda r: r.stop_index)
        times = [r.timestamp for r in rows]
        apc, d = _attach(times, apc_by_trip.get(tid, ()), tolerance_seconds)
        report.apc_attached += len(apc)
        report.apc_dropped += d
        wifi, d = _attach(times, wifi_by_trip.get(tid, ()), tolerance_seconds)
        report.wifi_attached += len(wifi)
        report.wifi_dropped += d

        events = []
        load = 0
        for pos, row in enumerate(rows):
            a = apc.get(pos)
            w = wifi.get(pos)
            load = load - row.mc_alight + row.mc_board
            if load != row.mc_load:
                warnings.warn(
                    "trip %s stop %d: manual counts break conservation "
                    "(recomputed %d, recorded %d)"
                    % (tid, row.stop_index, load, row.mc_load))
                load = row.mc_load
            events.append(StopEvent(
                trip_id=tid,
                stop_index=pos,
                stop_id=row.stop_id,
                timestamp=row.timestamp,
                hour_bin=row.hour_bin,
                apc_board_raw=a.board if a else 0,
                apc_alight_raw=a.alight if a else 0,
                mc_board=row.mc_board,
                mc_alight=row.mc_alight,
                mc_load=row.mc_load,
                wifi_count=w.count if w else None,
                wifi_valid=1 if w else 0,
                weather=row.weather,
                occupancy_prior=row.occupancy_prior,
                poi_density=row.poi_density,
            ))
        trips.append(Trip(trip_id=tid, stops=tuple(events)))
    return trips, report


# ---------------------------------------------------------------------------
# semantic stop labels

def _l1_normalize(vec: np.ndarray) -> np.ndarray:
    total = vec.sum()
    return vec / total if total > 0 else vec


class SemanticClusterer:
    """Seeded K-Means over L1-normalized POI density vectors."""

    def __init__(self, centroids: np.ndarray, radius: int):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.radius = int(radius)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    def assign(self, poi: Sequence[float]) -> int:
        vec = np.asarray(poi, dtype=np.float64)
        if vec.shape != (self.centroids.shape[1],):
            raise InputError(
                "POI vector has %d categories, clusterer was fitted on %d"
                % (vec.size, self.centroids.shape[1]))
        if not np.all(np.isfinite(vec)) or np.any(vec < 0):
            raise InputError("POI densities must be finite and >= 0")
        d = np.sum((self.centroids - _l1_normalize(vec)) ** 2, axis=1)
        return int(np.argmin(d))  # argmin keeps the lowest index on ties


def poi_vectors_from_trips(trips: Iterable[Trip]) -> Dict[str, Tuple[float, ...]]:
    """One POI vector per distinct stop; first occurrence wins."""
    out: Dict[str, Tuple[float, ...]] = {}
    for trip in trips:
        for ev in trip.stops:
            if ev.stop_id not in out and len(ev.poi_density) > 0:
                out[ev.stop_id] = ev.poi_density
    return out


def fit_semantics(training_trips: Sequence[Trip], k: int = 4,
                  radius: int = 300, seed: int = 0,
                  max_iter: int = 300, rel_tol: float = 1e-4,
                  ) -> SemanticClusterer:
    """Cluster the distinct training stops by normalized POI profile."""
    if k < 1:
        raise InputError("k must be >= 1")
    table = poi_vectors_from_trips(training_trips)
    if not table:
        raise InputError("no POI vectors in training trips")
    dims = {len(v) for v in table.values()}
    if len(dims) != 1:
        raise InputError("POI vectors have mixed lengths %s" % sorted(dims))

    order = sorted(table)  # stop-id order, independent of trip order
    points = np.array([_l1_normalize(np.asarray(table[s], dtype=np.float64))
                       for s in order])
    n_distinct = len(np.unique(points, axis=0))
    if n_distinct < k:
        warnings.warn("only %d distinct POI profiles, reducing K from %d"
                      % (n_distinct, k))
        k = n_distinct

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    prev_inertia = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(points)), labels].sum())
        for c in range(k):
            mask = labels == c
            if mask.any():
                centroids[c] = points[mask].mean(axis=0)
            # empty cluster keeps its previous centroid
        if prev_inertia is not None:
            if inertia == 0.0 or (prev_inertia - inertia) <= rel_tol * prev_inertia:
                break
        prev_inertia = inertia
    return SemanticClusterer(centroids, radius)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # remaining points coincide with a centroid; pick any unseen one
            rest = [i for i in range(n) if i not in chosen]
            chosen.append(rest[0] if rest else chosen[-1])
        else:
            r = rng.random() * total
            chosen.append(int(np.searchsorted(np.cumsum(d2), r, side="right")))
        d2 = np.minimum(d2, ((points - points[chosen[-1]]) ** 2).sum(axis=1))
    return points[chosen].copy()


def assign_semantics(clusterer: SemanticClusterer, poi: Sequence[float]) -> int:
    return clusterer.assign(poi)


# ---------------------------------------------------------------------------
# wifi anchor map

@dataclass(frozen=True)
class AnchorMap:
    """Hour-stratified persons-per-device ratios, ratio-of-sums estimates."""

    rho: Tuple[float, ...]
    rho_bar: float
    usable: bool

    def load_anchor(self, wifi_count: float, hour: int) -> float:
        if not self.usable:
            raise ContractViolation("anchor map is unusable; caller must "
                                    "treat anchors as invalid")
        if wifi_count < 0:
            raise InputError("wifi_count must be >= 0")
        if not 0 <= hour <= 23:
            raise InputError("hour must be in [0, 23]")
        return self.rho[hour] * float(wifi_count)


def _clip_ratio(value: float) -> float:
    return min(max(value, ANCHOR_RATIO_MIN), ANCHOR_RATIO_MAX)


def fit_anchor_map(training_trips: Sequence[Trip]) -> AnchorMap:
    """Ratio of summed loads to summed device counts, per hour bin.

    Only events with wifi_valid=1 and a positive count contribute. An
    empty bin falls back to the pooled ratio; a corpus with no anchors at
    all yields an unusable map.
    """
    load_sum = np.zeros(24)
    dev_sum = np.zeros(24)
    for trip in training_trips:
        for ev in trip.stops:
            if ev.wifi_valid and ev.wifi_count and ev.wifi_count > 0:
                load_sum[ev.hour_bin] += ev.mc_load
                dev_sum[ev.hour_bin] += ev.wifi_count
    total_dev = dev_sum.sum()
    if total_dev <= 0:
        return AnchorMap(rho=(1.0,) * 24, rho_bar=1.0, usable=False)
    rho_bar = _clip_ratio(float(load_sum.sum() / total_dev))
    rho = tuple(
        _clip_ratio(float(load_sum[h] / dev_sum[h])) if dev_sum[h] > 0
        else rho_bar
        for h in range(24)
    )
    return AnchorMap(rho=rho, rho_bar=rho_bar, usable=True)


def apply_anchor(anchor_map: AnchorMap, wifi_count: float, hour: int) -> float:
    return anchor_map.load_anchor(wifi_count, hour)


# ---------------------------------------------------------------------------
# occupancy prior

class OccupancyPrior:
    """Mean training load per (stop_id, hour bin), route mean as fallback."""

    def __init__(self, table: Dict[Tuple[str, int], float], route_mean: float):
        self.table = dict(table)
        self.route_mean = float(route_mean)

    @classmethod
    def fit(cls, training_trips: Sequence[Trip]) -> "OccupancyPrior":
        sums: Dict[Tuple[str, int], float] = {}
        counts: Dict[Tuple[str, int], int] = {}
        total = 0.0
        n = 0
        for trip in training_trips:
            for ev in trip.stops:
                key = (ev.stop_id, ev.hour_bin)
                sums[key] = sums.get(key, 0.0) + ev.mc_load
                counts[key] = counts.get(key, 0) + 1
                total += ev.mc_load
                n += 1
        if n == 0:
            raise InputError("cannot fit occupancy prior on empty training set")
        table = {k: sums[k] / counts[k] for k in sums}
        return cls(table, total / n)

    def prior_for(self, stop_id: str, hour: int) -> float:
        return self.table.get((stop_id, hour), self.route_mean)


# ---------------------------------------------------------------------------
# perception context

class ContextBuilder:
    """Assembles the per-stop feature matrix the flow predictor sees.

    Layout: raw APC boardings and alightings, hour-of-day sin/cos,
    day-of-week one-hot (7), semantic label one-hot (K, optional), weather
    covariates, a weather-imputation flag, and the occupancy prior. Wifi
    counts and anchor loads are not inputs here and cannot be added
    without changing this class: that separation is what keeps the
    predictor from memorizing the anchor channel.
    """

    def __init__(self, clusterer: Optional[SemanticClusterer],
                 occupancy: OccupancyPrior,
                 weather_means: Tuple[float, ...]):
        self.clusterer = clusterer
        self.occupancy = occupancy
        self.weather_means = tuple(float(v) for v in weather_means)

    @classmethod
    def fit(cls, training_trips: Sequence[Trip],
            clusterer: Optional[SemanticClusterer],
            occupancy: OccupancyPrior) -> "ContextBuilder":
        dim = None
        acc = None
        n = 0
        for trip in training_trips:
            for ev in trip.stops:
                if len(ev.weather) == 0:
                    continue
                if dim is None:
                    dim = len(ev.weather)
                    acc = np.zeros(dim)
                elif len(ev.weather) != dim:
                    raise InputError(
                        "weather vectors have mixed lengths (%d vs %d)"
                        % (len(ev.weather), dim))
                acc += np.asarray(ev.weather, dtype=np.float64)
                n += 1
        if dim is None:
            raise InputError("no weather observations in training trips")
        return cls(clusterer, occupancy, tuple(acc / n))

    @property
    def n_features(self) -> int:
        k = self.clusterer.k if self.clusterer is not None else 0
        return 2 + 2 + 7 + k + len(self.weather_means) + 1 + 1

    @property
    def feature_names(self) -> Tuple[str, ...]:
        names = ["apc_board_raw", "apc_alight_raw", "hour_sin", "hour_cos"]
        names += ["dow_%d" % d for d in range(7)]
        if self.clusterer is not None:
            names += ["sem_%d" % c for c in range(self.clusterer.k)]
        names += ["weather_%d" % i for i in range(len(self.weather_means))]
        names += ["weather_imputed", "occupancy_prior"]
        return tuple(names)

    def build(self, trip: Trip) -> np.ndarray:
        out = np.zeros((len(trip.stops), self.n_features))
        for i, ev in enumerate(trip.stops):
            out[i] = self._row(ev)
        return out

    def _row(self, ev: StopEvent) -> np.ndarray:
        row = [float(ev.apc_board_raw), float(ev.apc_alight_raw)]
        angle = 2.0 * math.pi * ev.hour_bin / 24.0
        row += [math.sin(angle), math.cos(angle)]
        dow = [0.0] * 7
        dow[int(ev.timestamp // SECONDS_PER_DAY) % 7] = 1.0
        row += dow
        if self.clusterer is not None:
            sem = [0.0] * self.clusterer.k
            sem[self.clusterer.assign(ev.poi_density)] = 1.0
            row += sem
        if len(ev.weather) == len(self.weather_means):
            row += [float(v) for v in ev.weather]
            row.append(0.0)
        elif len(ev.weather) == 0:
            row += list(self.weather_means)
            row.append(1.0)
        else:
            raise InputError(
                "weather vector has %d components, expected %d"
                % (len(ev.weather), len(self.weather_means)))
        row.append(self.occupancy.prior_for(ev.stop_id, ev.hour_bin))
        return np.asarray(row)


def build_context(trip: Trip, builder: ContextBuilder) -> np.ndarray:
    return builder.build(trip)


# ---------------------------------------------------------------------------
# POI density table

def read_poi_table(path: str) -> Dict[Tuple[str, int], Tuple[float, ...]]:
    """Read a POI density table keyed by (stop_id, buffer radius in m).

    Line format after the header: stop_id,radius,v0;v1;...;vn
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError("cannot open POI table %s: %s" % (path, exc)) from exc
    table: Dict[Tuple[str, int], Tuple[float, ...]] = {}
    with fh:
        header = fh.readline().strip()
        if header != "stop_id,radius,poi_density":
            raise InputError("line 1: unexpected POI table header %r" % header)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise InputError("line %d: expected 3 fields, found %d"
                                 % (lineno, len(parts)))
            try:
                radius = int(parts[1])
                vec = tuple(float(p) for p in parts[2].split(";"))
            except ValueError as exc:
                raise InputError("line %d: %s" % (lineno, exc)) from exc
            if any(v < 0 for v in vec):
                raise InputError("line %d: POI densities must be >= 0" % lineno)
            table[(parts[0], radius)] = vec
    if not table:
        raise InputError("POI table %s contains no rows" % path)
    return table
