"""Trust-weighted fusion of the projected state with an external anchor.

The anchor is an absolute load reading (here: scaled device counts). Its
influence is gated by a trust score built from three signals: anchor
validity v, disagreement d between anchor and projected state, and the
projection residual e_phys. The recursion weight is

    omega = v * exp(-d / s_d) * exp(-e / s_e)
    alpha = 1 / (1 + omega)

so alpha = 1 exactly when the anchor is invalid, and alpha lies in
[0.5, 1] otherwise: the anchor never outweighs the recursion, and its
weight shrinks as it disagrees with the projected state or as the
projection itself reports inconsistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import DEFAULT_CAPACITY, capacity_value
from .errors import ContractViolation


@dataclass(frozen=True)
class TrustParams:
    """Scales of the trust decay plus the fixed-weight ablation constant."""

    s_d: float = 15.0    # disagreement scale (passengers)
    s_e: float = 5.0     # projection-residual scale (passengers)
    alpha0: float = 0.5  # constant weight used by the fixed-fusion ablation

    def __post_init__(self):
        if self.s_d <= 0 or self.s_e <= 0:
            raise ContractViolation("trust scales must be positive")
        if not (0.0 <= self.alpha0 <= 1.0):
            raise ContractViolation("alpha0 must lie in [0, 1]")


def disagreement(y_load: float, l_phys: float) -> float:
    """Absolute gap between the anchor reading and the projected state."""
    return abs(float(y_load) - float(l_phys))


def trust_weight(v: int, d: float, e: float, params: TrustParams = TrustParams()) -> float:
    """Recursion weight alpha in [0.5, 1] for v=1, exactly 1 for v=0."""
    if v not in (0, 1):
        raise ContractViolation("anchor validity flag must be 0 or 1")
    if d < 0 or e < 0:
        raise ContractViolation("disagreement and residual must be nonnegative")
    if v == 0:
        return 1.0
    omega = math.exp(-d / params.s_d) * math.exp(-e / params.s_e)
    return 1.0 / (1.0 + omega)


def fuse(l_phys: float, y_load, alpha: float, capacity=DEFAULT_CAPACITY) -> float:
    """Convex blend of projected state and anchor, clamped to [0, C].

    With no anchor (y_load is None) the projected state passes through
    unchanged and alpha must be 1.
    """
    c = capacity_value(capacity)
    l_phys = float(l_phys)
    if y_load is None:
        if alpha != 1.0:
            raise ContractViolation("alpha must be 1 when no anchor is present")
        return min(max(l_phys, 0.0), c)
    if not (0.0 <= alpha <= 1.0):
        raise ContractViolation("alpha %r outside [0, 1]" % (alpha,))
    y = float(y_load)
    if y < 0.0:
        raise ContractViolation("anchor load must be nonnegative")
    fused = alpha * l_phys + (1.0 - alpha) * y
    return min(max(fused, 0.0), c)
