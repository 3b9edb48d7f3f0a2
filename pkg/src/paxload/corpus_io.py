"""Plain-text corpus serialization: one stop event per line.

Layout: a schema marker line, a column header line, then comma-separated
records in stop-event field order. Vector fields (weather, poi_density)
join their components with ';'. A missing optional field (wifi_count) is
written as the empty string. Floats use repr, so a write/read round trip
is exact and repeated writes are byte-identical.
"""

from __future__ import annotations

from typing import List

from .core import StopEvent, Trip, trips_from_events
from .errors import InputError

SCHEMA_VERSION = "paxload-corpus-v1"

_COLUMNS = (
    "trip_id", "stop_index", "stop_id", "timestamp", "hour_bin",
    "apc_board_raw", "apc_alight_raw", "mc_board", "mc_alight", "mc_load",
    "wifi_count", "wifi_valid", "weather", "occupancy_prior", "poi_density",
)


def _fmt_vec(vec) -> str:
    return ";".join(repr(float(v)) for v in vec)


def _parse_vec(text: str, lineno: int, col: str):
    if text == "":
        return ()
    try:
        return tuple(float(p) for p in text.split(";"))
    except ValueError as exc:
        raise InputError("line %d: bad %s vector %r" % (lineno, col, text)) from exc


def write_corpus(trips: List[Trip], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SCHEMA_VERSION + "\n")
        fh.write(",".join(_COLUMNS) + "\n")
        for trip in trips:
            for ev in trip.stops:
                fh.write(",".join((
                    ev.trip_id,
                    str(ev.stop_index),
                    ev.stop_id,
                    repr(float(ev.timestamp)),
                    str(ev.hour_bin),
                    str(ev.apc_board_raw),
                    str(ev.apc_alight_raw),
                    str(ev.mc_board),
                    str(ev.mc_alight),
                    str(ev.mc_load),
                    "" if ev.wifi_count is None else str(ev.wifi_count),
                    str(ev.wifi_valid),
                    _fmt_vec(ev.weather),
                    repr(float(ev.occupancy_prior)),
                    _fmt_vec(ev.poi_density),
                )) + "\n")


def read_corpus(path: str) -> List[Trip]:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError("cannot open corpus %s: %s" % (path, exc)) from exc
    with fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_VERSION:
            raise InputError("line 1: expected schema marker %r, found %r"
                             % (SCHEMA_VERSION, first))
        header = fh.readline().rstrip("\n")
        if header != ",".join(_COLUMNS):
            raise InputError("line 2: unexpected column header")
        events = []
        for lineno, line in enumerate(fh, start=3):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(_COLUMNS):
                raise InputError("line %d: expected %d fields, found %d"
                                 % (lineno, len(_COLUMNS), len(parts)))
            try:
                events.append(StopEvent(
                    trip_id=parts[0],
                    stop_index=int(parts[1]),
                    stop_id=parts[2],
                    timestamp=float(parts[3]),
                    hour_bin=int(parts[4]),
                    apc_board_raw=int(parts[5]),
                    apc_alight_raw=int(parts[6]),
                    mc_board=int(parts[7]),
                    mc_alight=int(parts[8]),
                    mc_load=int(parts[9]),
                    wifi_count=None if parts[10] == "" else int(parts[10]),
                    wifi_valid=int(parts[11]),
                    weather=_parse_vec(parts[12], lineno, "weather"),
                    occupancy_prior=float(parts[13]),
                    poi_density=_parse_vec(parts[14], lineno, "poi_density"),
                ))
            except ValueError as exc:
                raise InputError("line %d: %s" % (lineno, exc)) from exc
    if not events:
        raise InputError("corpus %s contains no records" % path)
    return trips_from_events(events)
