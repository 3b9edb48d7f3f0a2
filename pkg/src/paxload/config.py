"""Single INI-style configuration file covering every pipeline default.

Any key can be overridden from the command line with repeated
--set section.key=value flags; the fully resolved configuration is echoed
into the output directory so a run can be reproduced from its artifacts
alone. Unknown sections or keys are rejected rather than ignored.
"""

from __future__ import annotations

import configparser
from typing import Dict, Optional, Sequence, Tuple

from .errors import InputError
from .evaluation import MatrixConfig, VARIANT_NAMES
from .synth import SynthConfig

_SYNTH_DEFAULTS = SynthConfig()
_MATRIX_DEFAULTS = MatrixConfig()


def _csv_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


DEFAULTS: Dict[str, Dict[str, str]] = {
    "synth": {
        "n_trips": str(_SYNTH_DEFAULTS.n_trips),
        "stops_min": str(_SYNTH_DEFAULTS.stops_min),
        "stops_max": str(_SYNTH_DEFAULTS.stops_max),
        "n_route_stops": str(_SYNTH_DEFAULTS.n_route_stops),
        "stop_type_count": str(_SYNTH_DEFAULTS.stop_type_count),
        "seed": str(_SYNTH_DEFAULTS.seed),
        "capacity": repr(_SYNTH_DEFAULTS.capacity),
        "demand_scale": repr(_SYNTH_DEFAULTS.demand_scale),
        "hour_profile": _csv_floats(_SYNTH_DEFAULTS.hour_profile),
        "device_ratio_per_hour": _csv_floats(
            _SYNTH_DEFAULTS.device_ratio_per_hour),
        "miscount_prob": repr(_SYNTH_DEFAULTS.miscount_prob),
        "spike_prob": repr(_SYNTH_DEFAULTS.spike_prob),
        "spike_mag_min": str(_SYNTH_DEFAULTS.spike_mag_min),
        "spike_mag_max": str(_SYNTH_DEFAULTS.spike_mag_max),
        "cold_start_prob": repr(_SYNTH_DEFAULTS.cold_start_prob),
        "cold_start_stops_min": str(_SYNTH_DEFAULTS.cold_start_stops_min),
        "cold_start_stops_max": str(_SYNTH_DEFAULTS.cold_start_stops_max),
        "wifi_missing_prob": repr(_SYNTH_DEFAULTS.wifi_missing_prob),
        "anchor_sigma": repr(_SYNTH_DEFAULTS.anchor_sigma),
        "wifi_fade_prob": repr(_SYNTH_DEFAULTS.wifi_fade_prob),
        "wifi_fade_devices_min": str(_SYNTH_DEFAULTS.wifi_fade_devices_min),
        "wifi_fade_devices_max": str(_SYNTH_DEFAULTS.wifi_fade_devices_max),
        "precip_prob": repr(_SYNTH_DEFAULTS.precip_prob),
    },
    "evaluation": {
        "seeds": ",".join(str(s) for s in _MATRIX_DEFAULTS.seeds),
        "n_folds": str(_MATRIX_DEFAULTS.n_folds),
        "variants": ",".join(_MATRIX_DEFAULTS.variants),
        "tau_bad_quantile": repr(_MATRIX_DEFAULTS.tau_bad_quantile),
    },
    "model": {
        "n_trees": str(_MATRIX_DEFAULTS.n_trees),
        "max_depth": str(_MATRIX_DEFAULTS.max_depth),
        "min_samples_leaf": str(_MATRIX_DEFAULTS.min_samples_leaf),
        "n_bins": str(_MATRIX_DEFAULTS.n_bins),
    },
    "trust": {
        "s_d": repr(_MATRIX_DEFAULTS.s_d),
        "s_e": repr(_MATRIX_DEFAULTS.s_e),
        "alpha0": repr(_MATRIX_DEFAULTS.alpha0),
    },
    "reweight": {
        "lambda": repr(_MATRIX_DEFAULTS.reweight_lambda),
        "omega_max": repr(_MATRIX_DEFAULTS.omega_max),
    },
    "shift": {
        "min_anchor_fraction": repr(_MATRIX_DEFAULTS.min_anchor_fraction),
        "mean_threshold": repr(_MATRIX_DEFAULTS.shift_mean_threshold),
        "std_threshold": repr(_MATRIX_DEFAULTS.shift_std_threshold),
    },
    "semantics": {
        "kmeans_k": str(_MATRIX_DEFAULTS.kmeans_k),
        "poi_radius": str(_MATRIX_DEFAULTS.poi_radius),
    },
    "abm": {
        "kappa": repr(_MATRIX_DEFAULTS.abm_kappa),
        "samples": str(_MATRIX_DEFAULTS.abm_samples),
        "shock_w1_threshold": repr(_MATRIX_DEFAULTS.shock_w1_threshold),
        "in_matrix": str(_MATRIX_DEFAULTS.abm_in_matrix).lower(),
    },
}


def _fresh_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    return cp


def load_config(path: Optional[str] = None) -> configparser.ConfigParser:
    """Defaults, optionally overlaid with a config file."""
    cp = _fresh_parser()
    if path is None:
        return cp
    user = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user.read_file(fh, source=path)
    except OSError as exc:
        raise InputError("cannot open config %s: %s" % (path, exc)) from exc
    except configparser.Error as exc:
        raise InputError("bad config %s: %s" % (path, exc)) from exc
    for section in user.sections():
        if section not in DEFAULTS:
            raise InputError("unknown config section [%s]" % section)
        for key, value in user.items(section):
            if key not in DEFAULTS[section]:
                raise InputError("unknown config key %s.%s" % (section, key))
            cp.set(section, key, value)
    return cp


def apply_overrides(cp: configparser.ConfigParser,
                    assignments: Sequence[str]) -> None:
    """Apply --set section.key=value flags in order."""
    for text in assignments:
        head, sep, value = text.partition("=")
        section, dot, key = head.partition(".")
        if not sep or not dot or not section or not key:
            raise InputError("override %r is not section.key=value" % text)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise InputError("unknown config key %s.%s" % (section, key))
        cp.set(section, key, value)


def write_effective(cp: configparser.ConfigParser, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)


def _get(cp, section, key, conv, kind):
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise InputError("config %s.%s: %r is not %s"
                         % (section, key, raw, kind)) from exc


def _get_int(cp, section, key) -> int:
    return _get(cp, section, key, int, "an integer")


def _get_float(cp, section, key) -> float:
    return _get(cp, section, key, float, "a number")


def _get_bool(cp, section, key) -> bool:
    raw = cp.get(section, key).strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise InputError("config %s.%s: %r is not a boolean" % (section, key, raw))


def _get_float_list(cp, section, key) -> Tuple[float, ...]:
    return tuple(_get(cp, section, key,
                      lambda s: [float(p) for p in s.split(",")],
                      "a comma-separated number list"))


def _get_int_list(cp, section, key) -> Tuple[int, ...]:
    return tuple(_get(cp, section, key,
                      lambda s: [int(p) for p in s.split(",")],
                      "a comma-separated integer list"))


def synth_config(cp: configparser.ConfigParser) -> SynthConfig:
    return SynthConfig(
        n_trips=_get_int(cp, "synth", "n_trips"),
        stops_min=_get_int(cp, "synth", "stops_min"),
        stops_max=_get_int(cp, "synth", "stops_max"),
        n_route_stops=_get_int(cp, "synth", "n_route_stops"),
        stop_type_count=_get_int(cp, "synth", "stop_type_count"),
        seed=_get_int(cp, "synth", "seed"),
        capacity=_get_float(cp, "synth", "capacity"),
        demand_scale=_get_float(cp, "synth", "demand_scale"),
        hour_profile=_get_float_list(cp, "synth", "hour_profile"),
        device_ratio_per_hour=_get_float_list(
            cp, "synth", "device_ratio_per_hour"),
        miscount_prob=_get_float(cp, "synth", "miscount_prob"),
        spike_prob=_get_float(cp, "synth", "spike_prob"),
        spike_mag_min=_get_int(cp, "synth", "spike_mag_min"),
        spike_mag_max=_get_int(cp, "synth", "spike_mag_max"),
        cold_start_prob=_get_float(cp, "synth", "cold_start_prob"),
        cold_start_stops_min=_get_int(cp, "synth", "cold_start_stops_min"),
        cold_start_stops_max=_get_int(cp, "synth", "cold_start_stops_max"),
        wifi_missing_prob=_get_float(cp, "synth", "wifi_missing_prob"),
        anchor_sigma=_get_float(cp, "synth", "anchor_sigma"),
        wifi_fade_prob=_get_float(cp, "synth", "wifi_fade_prob"),
        wifi_fade_devices_min=_get_int(cp, "synth", "wifi_fade_devices_min"),
        wifi_fade_devices_max=_get_int(cp, "synth", "wifi_fade_devices_max"),
        precip_prob=_get_float(cp, "synth", "precip_prob"),
    )


def matrix_config(cp: configparser.ConfigParser,
                  variants: Optional[Sequence[str]] = None,
                  threads: int = 1) -> MatrixConfig:
    """Evaluation protocol settings; `variants`/`threads` come from flags."""
    chosen = tuple(variants) if variants is not None \
        else _get(cp, "evaluation", "variants",
                  lambda s: tuple(p.strip() for p in s.split(",")),
                  "a variant list")
    unknown = set(chosen) - set(VARIANT_NAMES)
    if unknown:
        raise InputError("unknown variants: %s" % ", ".join(sorted(unknown)))
    return MatrixConfig(
        capacity=_get_float(cp, "synth", "capacity"),
        seeds=_get_int_list(cp, "evaluation", "seeds"),
        n_folds=_get_int(cp, "evaluation", "n_folds"),
        variants=chosen,
        n_trees=_get_int(cp, "model", "n_trees"),
        max_depth=_get_int(cp, "model", "max_depth"),
        min_samples_leaf=_get_int(cp, "model", "min_samples_leaf"),
        n_bins=_get_int(cp, "model", "n_bins"),
        s_d=_get_float(cp, "trust", "s_d"),
        s_e=_get_float(cp, "trust", "s_e"),
        alpha0=_get_float(cp, "trust", "alpha0"),
        reweight_lambda=_get_float(cp, "reweight", "lambda"),
        omega_max=_get_float(cp, "reweight", "omega_max"),
        min_anchor_fraction=_get_float(cp, "shift", "min_anchor_fraction"),
        shift_mean_threshold=_get_float(cp, "shift", "mean_threshold"),
        shift_std_threshold=_get_float(cp, "shift", "std_threshold"),
        kmeans_k=_get_int(cp, "semantics", "kmeans_k"),
        poi_radius=_get_int(cp, "semantics", "poi_radius"),
        tau_bad_quantile=_get_float(cp, "evaluation", "tau_bad_quantile"),
        abm_kappa=_get_float(cp, "abm", "kappa"),
        abm_samples=_get_int(cp, "abm", "samples"),
        shock_w1_threshold=_get_float(cp, "abm", "shock_w1_threshold"),
        abm_in_matrix=_get_bool(cp, "abm", "in_matrix"),
        threads=threads,
    )
