"""Trip-level drift correction and residual-driven model reweighting.

The shift probe watches anchor-vs-state residuals over a whole trip and
only fires on persistent, low-variance drift; it is off in the default
configuration and exists for the ablation study. Reweighting feeds the
projection residuals of a training-only forward pass back into one model
refit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Trajectory, Trip, capacity_value
from .engine import RULE_FUSION, run_trip
from .errors import InputError
from .fusion import TrustParams
from .perception import fit_flow_predictor

MIN_ANCHORED_STOPS = 3


@dataclass(frozen=True)
class ShiftGateParams:
    min_anchor_fraction: float = 0.5
    mean_threshold: float = 5.0   # passengers of persistent drift
    std_threshold: float = 4.0    # max spread to still count as persistent

    def __post_init__(self):
        if self.mean_threshold <= 0 or self.std_threshold <= 0:
            raise InputError("shift gate thresholds must be > 0")
        if not 0.0 <= self.min_anchor_fraction <= 1.0:
            raise InputError("min_anchor_fraction must be in [0, 1]")


@dataclass(frozen=True)
class ReweightParams:
    lam: float = 0.5
    omega_max: float = 5.0

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("lambda must be >= 0")
        if self.omega_max < 1:
            raise InputError("omega_max must be >= 1")


def shift_gate(trajectory: Trajectory,
               params: Optional[ShiftGateParams] = None,
               ) -> Tuple[int, float]:
    """Decide whether the whole trip drifted and by how much.

    Drift samples are anchor minus fused state at anchored stops. The
    gate opens only when anchors cover at least half the trip, the mean
    residual is large, and its spread is small; fewer than 3 anchored
    stops is never enough evidence. Returns (gate, delta) with delta the
    residual median when gated, else 0.
    """
    p = params if params is not None else ShiftGateParams()
    residuals = [t.anchor - t.l_fused for t in trajectory.traces
                 if t.anchor is not None]
    n = len(trajectory.traces)
    if n == 0:
        raise InputError("trajectory has no traces")
    if len(residuals) < MIN_ANCHORED_STOPS:
        return 0, 0.0
    if len(residuals) / n < p.min_anchor_fraction:
        return 0, 0.0
    r = np.asarray(residuals)
    if abs(float(r.mean())) <= p.mean_threshold:
        return 0, 0.0
    if float(r.std(ddof=1)) >= p.std_threshold:
        return 0, 0.0
    return 1, float(np.median(r))


def apply_shift(trajectory: Trajectory, gate: int, delta: float,
                capacity=None) -> Trajectory:
    """Shift every state by delta when gated, clamped back into [0, C]."""
    if gate not in (0, 1):
        raise InputError("gate must be 0 or 1")
    if gate == 0:
        return trajectory
    cap = capacity_value(capacity)
    shifted = tuple(min(max(l + delta, 0.0), cap) for l in trajectory.l_final)
    return Trajectory(trip_id=trajectory.trip_id, traces=trajectory.traces,
                      l_final=shifted)


def compute_reweights(trajectories: Sequence[Trajectory],
                      params: Optional[ReweightParams] = None) -> np.ndarray:
    """Per-stop sample weights from projection residuals, in trace order.

    omega = min(1 + lam * e_phys, omega_max), so clean stops keep weight
    exactly 1 and heavily clipped stops are emphasized up to the cap.
    """
    p = params if params is not None else ReweightParams()
    out: List[float] = []
    for traj in trajectories:
        for t in traj.traces:
            out.append(min(1.0 + p.lam * t.e_phys, p.omega_max))
    return np.asarray(out)


def closed_loop_refit(train_trips: Sequence[Trip], builder, anchor_map,
                      forest_params=None, reweight_params=None,
                      trust_params: Optional[TrustParams] = None,
                      capacity=None):
    """Fit, run the recursion on the training trips, refit with weights.

    Exactly one reweight round: unit-weight fit, training-side forward
    pass under the trust rule, residual weights, weighted fit. Returns
    (initial_model, refit_model, weights).
    """
    if len(train_trips) == 0:
        raise InputError("no training trips")
    contexts = [builder.build(t) for t in train_trips]
    x = np.vstack(contexts)
    yb = np.array([ev.mc_board for t in train_trips for ev in t.stops],
                  dtype=float)
    ya = np.array([ev.mc_alight for t in train_trips for ev in t.stops],
                  dtype=float)
    initial = fit_flow_predictor(x, yb, ya, params=forest_params)

    trajs = [run_trip(t, initial, builder, anchor_map, trust_params,
                      capacity, RULE_FUSION) for t in train_trips]
    weights = compute_reweights(trajs, reweight_params)
    if np.all(weights == 1.0):
        # nothing to emphasize; the weighted fit would be bit-identical
        return initial, initial, weights
    refit = fit_flow_predictor(x, yb, ya, sample_weights=weights,
                               params=forest_params)
    return initial, refit, weights
