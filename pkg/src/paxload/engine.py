"""Per-trip state recursion: predict, project, weigh, fuse, feed back.

The fused state at stop k is the initial condition at stop k+1, so a trip
is strictly sequential; different trips are independent.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .core import StepTrace, Trajectory, Trip, capacity_value
from .errors import ContractViolation, InputError
from .fusion import TrustParams, disagreement, fuse, trust_weight
from .ingest import AnchorMap, ContextBuilder
from .projection import project

PERCEPTION_ONLY = "perception_only"
PHYS_ONLY = "phys_only"
FIXED_FUSION = "fixed_fusion"
RULE_FUSION = "rule_fusion"
VARIANTS = (PERCEPTION_ONLY, PHYS_ONLY, FIXED_FUSION, RULE_FUSION)


def _proposals(trip: Trip, predictor, builder: Optional[ContextBuilder],
               proposals) -> Tuple[np.ndarray, np.ndarray]:
    if proposals is not None:
        b, a = proposals
    else:
        contexts = builder.build(trip) if builder is not None else None
        b, a = predictor.propose(trip, contexts)
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if b.shape != (len(trip.stops),) or a.shape != (len(trip.stops),):
        raise ContractViolation(
            "predictor returned %s/%s proposals for a %d-stop trip"
            % (b.shape, a.shape, len(trip.stops)))
    if np.any(b < 0) or np.any(a < 0) or not (np.isfinite(b).all()
                                              and np.isfinite(a).all()):
        raise ContractViolation("flow proposals must be finite and >= 0")
    return b, a


def run_trip(trip: Trip, predictor, builder: Optional[ContextBuilder] = None,
             anchor_map: Optional[AnchorMap] = None,
             trust_params: Optional[TrustParams] = None,
             capacity=None, variant: str = RULE_FUSION,
             proposals=None) -> Trajectory:
    """Run the stop-by-stop cascade and record a full trace per stop.

    `variant` selects the ablation: perception_only integrates raw
    proposals with no projection or fusion (its running state is the
    unconstrained shadow; traces store the clamped value so every trace
    field keeps its range invariant, and the raw series is recoverable
    from the recorded proposals). phys_only ignores anchors, fixed_fusion
    blends with a constant weight, rule_fusion applies the trust rule.
    Precomputed `proposals` (b_hats, a_hats) bypass the predictor.
    """
    if variant not in VARIANTS:
        raise InputError("unknown variant %r, expected one of %s"
                         % (variant, ", ".join(VARIANTS)))
    if len(trip.stops) == 0:
        raise InputError("trip %s has no stops" % trip.trip_id)
    cap = capacity_value(capacity)
    params = trust_params if trust_params is not None else TrustParams()
    b_hats, a_hats = _proposals(trip, predictor, builder, proposals)

    anchors_on = variant in (FIXED_FUSION, RULE_FUSION) \
        and anchor_map is not None and anchor_map.usable

    traces = []
    state = 0.0  # L_0: every trip starts empty
    shadow = 0.0
    for k, ev in enumerate(trip.stops):
        b_hat = float(b_hats[k])
        a_hat = float(a_hats[k])
        try:
            if variant == PERCEPTION_ONLY:
                shadow += b_hat - a_hat
                clamped = min(max(shadow, 0.0), cap)
                traces.append(StepTrace(
                    b_hat=b_hat, a_hat=a_hat, a_star=a_hat, b_star=b_hat,
                    l_phys=clamped, e_phys=0.0, anchor=None,
                    disagreement=None, alpha=None, l_fused=clamped))
                continue

            a_star, b_star, l_phys, e_phys = project(state, b_hat, a_hat, cap)
            anchor = None
            if anchors_on and ev.wifi_valid and ev.wifi_count is not None:
                anchor = anchor_map.load_anchor(ev.wifi_count, ev.hour_bin)

            if anchor is None:
                fused = fuse(l_phys, None, 1.0, cap)
                traces.append(StepTrace(
                    b_hat=b_hat, a_hat=a_hat, a_star=a_star, b_star=b_star,
                    l_phys=l_phys, e_phys=e_phys, anchor=None,
                    disagreement=None, alpha=None, l_fused=fused))
            else:
                d = disagreement(anchor, l_phys)
                if variant == FIXED_FUSION:
                    alpha = params.alpha0
                else:
                    alpha = trust_weight(1, d, e_phys, params)
                fused = fuse(l_phys, anchor, alpha, cap)
                traces.append(StepTrace(
                    b_hat=b_hat, a_hat=a_hat, a_star=a_star, b_star=b_star,
                    l_phys=l_phys, e_phys=e_phys, anchor=anchor,
                    disagreement=d, alpha=alpha, l_fused=fused))
            state = traces[-1].l_fused
        except ContractViolation as exc:
            raise ContractViolation(
                "trip %s stop %d: %s" % (trip.trip_id, k, exc)) from exc

    return Trajectory(trip_id=trip.trip_id, traces=tuple(traces),
                      l_final=tuple(t.l_fused for t in traces))


def raw_state_series(trajectory: Trajectory, l0: float = 0.0) -> Tuple[float, ...]:
    """Unconstrained cumulative state implied by the recorded proposals."""
    out = []
    s = l0
    for t in trajectory.traces:
        s += t.b_hat - t.a_hat
        out.append(s)
    return tuple(out)


def run_trips(trips: Sequence[Trip], predictor,
              builder: Optional[ContextBuilder] = None,
              anchor_map: Optional[AnchorMap] = None,
              trust_params: Optional[TrustParams] = None,
              capacity=None, variant: str = RULE_FUSION):
    return [run_trip(t, predictor, builder, anchor_map, trust_params,
                     capacity, variant) for t in trips]
