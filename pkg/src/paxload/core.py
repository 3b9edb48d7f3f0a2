"""Core state-centric data model for stop-event load estimation.

A trip is an ordered sequence of stop events. The latent state is the
onboard load L_k after servicing stop k; every trip starts at L_0 = 0, so
the first stop cannot alight anyone. Flows (boardings/alightings) are only
meaningful relative to that state, which is what the shadow recursion below
makes visible: accumulating raw flow estimates without state feedback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import ContractViolation, CorpusInvariantError, InputError


@dataclass(frozen=True)
class Capacity:
    """Vehicle capacity bound C; all load states live in [0, C]."""

    limit: float = 80.0

    def __post_init__(self):
        if self.limit <= 0:
            raise ContractViolation("capacity must be positive, got %r" % (self.limit,))


DEFAULT_CAPACITY = Capacity(80.0)


def capacity_value(capacity) -> float:
    """Accept a Capacity, a bare number, or None (the default bound)."""
    if capacity is None:
        return DEFAULT_CAPACITY.limit
    if isinstance(capacity, Capacity):
        return float(capacity.limit)
    c = float(capacity)
    if c <= 0:
        raise ContractViolation("capacity must be positive, got %r" % (capacity,))
    return c


@dataclass(frozen=True)
class StopEvent:
    """One serviced stop of one trip, with all per-stop observations.

    apc_* are the raw automatic counts (noisy), mc_* the trusted manual
    ground truth, wifi_count the optional device-count anchor source.
    weather and poi_density are fixed-length vectors; occupancy_prior is a
    cross-trip crowding prior for this stop/hour.
    """

    trip_id: str
    stop_index: int
    stop_id: str
    timestamp: float
    hour_bin: int           # 0..23, calendar hour of the visit
    apc_board_raw: int
    apc_alight_raw: int
    mc_board: int
    mc_alight: int
    mc_load: int
    wifi_count: Optional[int]
    wifi_valid: int         # 1 iff wifi_count is present and trustworthy
    weather: Tuple[float, ...]
    occupancy_prior: float
    poi_density: Tuple[float, ...]


@dataclass(frozen=True)
class Trip:
    """Ordered stop events sharing one trip_id; index runs 0..K."""

    trip_id: str
    stops: Tuple[StopEvent, ...]

    def __len__(self) -> int:
        return len(self.stops)


@dataclass(frozen=True)
class StepTrace:
    """Full record of one recursion step, kept for audit and export.

    anchor, disagreement and alpha are None when no anchor was available
    at the stop; the fused state then equals the projected state (the
    effective fusion weight is 1).
    """

    b_hat: float
    a_hat: float
    a_star: float
    b_star: float
    l_phys: float
    e_phys: float
    anchor: Optional[float]
    disagreement: Optional[float]
    alpha: Optional[float]
    l_fused: float


@dataclass(frozen=True)
class Trajectory:
    """Per-trip estimation result: step traces plus the final state series."""

    trip_id: str
    traces: Tuple[StepTrace, ...]
    l_final: Tuple[float, ...]


def validate_trip(trip: Trip, capacity=DEFAULT_CAPACITY) -> None:
    """Check structural invariants of one trip's events.

    Raises CorpusInvariantError when stop indices are not consecutive from
    0, when a claimed-valid anchor has no count, or when the manual-count
    ground truth breaks conservation or the [0, C] bound.
    """
    c = capacity_value(capacity)
    if not trip.stops:
        raise CorpusInvariantError("trip %s has no stop events" % trip.trip_id)
    load = 0
    for k, ev in enumerate(trip.stops):
        if ev.trip_id != trip.trip_id:
            raise CorpusInvariantError(
                "trip %s stop %d carries trip_id %s" % (trip.trip_id, k, ev.trip_id))
        if ev.stop_index != k:
            raise CorpusInvariantError(
                "trip %s: stop indices not consecutive at position %d" % (trip.trip_id, k))
        if ev.wifi_valid == 1 and ev.wifi_count is None:
            raise CorpusInvariantError(
                "trip %s stop %d: wifi_valid set but wifi_count missing" % (trip.trip_id, k))
        if min(ev.apc_board_raw, ev.apc_alight_raw, ev.mc_board, ev.mc_alight) < 0:
            raise CorpusInvariantError(
                "trip %s stop %d: negative count" % (trip.trip_id, k))
        expected = load - ev.mc_alight + ev.mc_board
        if ev.mc_load != expected:
            raise CorpusInvariantError(
                "trip %s stop %d: mc_load %d breaks conservation (expected %d)"
                % (trip.trip_id, k, ev.mc_load, expected))
        if not (0 <= ev.mc_load <= c):
            raise CorpusInvariantError(
                "trip %s stop %d: mc_load %d outside [0, %g]" % (trip.trip_id, k, ev.mc_load, c))
        load = ev.mc_load


def shadow_trajectory(b_hats: Sequence[float], a_hats: Sequence[float],
                      l0: float = 0.0) -> List[float]:
    """Open-loop flow accumulation L_k = l0 + sum_{t<=k} (B_t - A_t).

    Deliberately unclamped: the series is the diagnostic for how far a
    flow-only view drifts outside physical bounds.
    """
    if len(b_hats) != len(a_hats):
        raise ContractViolation("shadow series need equal lengths")
    out = []
    acc = float(l0)
    for b, a in zip(b_hats, a_hats):
        acc += float(b) - float(a)
        out.append(acc)
    return out


def shadow_infeasibility_rate(shadow: Sequence[float], capacity=DEFAULT_CAPACITY) -> float:
    """Fraction of shadow entries outside [0, C]; boundary values count as feasible."""
    c = capacity_value(capacity)
    if len(shadow) == 0:
        raise InputError("empty shadow series")
    bad = sum(1 for v in shadow if v < 0.0 or v > c)
    return bad / len(shadow)


def trips_from_events(events: Iterable[StopEvent]) -> List[Trip]:
    """Group loose events into trips ordered by stop_index, trips by id."""
    by_trip = {}
    for ev in events:
        by_trip.setdefault(ev.trip_id, []).append(ev)
    trips = []
    for tid in sorted(by_trip):
        stops = tuple(sorted(by_trip[tid], key=lambda e: e.stop_index))
        trips.append(Trip(trip_id=tid, stops=stops))
    return trips
