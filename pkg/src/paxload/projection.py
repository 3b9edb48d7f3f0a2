"""Physical projection of flow proposals onto feasible load transitions.

Given the previous load and proposed (boarding, alighting) flows, clip the
flows so the resulting load stays in [0, C]. Alighting is resolved before
boarding: you cannot alight more people than are on board, and boarding is
then limited by the seats freed up. The total amount clipped away is the
physical residual e_phys, the pipeline's internal inconsistency signal.
"""

from __future__ import annotations

from typing import Iterable, Tuple

from .core import DEFAULT_CAPACITY, StepTrace, capacity_value
from .errors import ContractViolation

# residuals below this are treated as exact zero when computing rates
RESIDUAL_EPS = 1e-9


def project(l_prev: float, b_hat: float, a_hat: float,
            capacity=DEFAULT_CAPACITY) -> Tuple[float, float, float, float]:
    """Clip (b_hat, a_hat) against the state and return the feasible step.

    Returns (a_star, b_star, l_phys, e_phys) with
        a_star = min(a_hat, l_prev)
        b_star = min(b_hat, C - (l_prev - a_star))
        l_phys = l_prev - a_star + b_star
        e_phys = (a_hat - a_star) + (b_hat - b_star)

    l_phys is guaranteed to land in [0, C] whenever l_prev does; e_phys is
    the mass the clip removed, zero iff the proposal was feasible as-is.
    """
    c = capacity_value(capacity)
    l_prev = float(l_prev)
    b_hat = float(b_hat)
    a_hat = float(a_hat)
    if not (0.0 <= l_prev <= c):
        raise ContractViolation("l_prev %r outside [0, %g]" % (l_prev, c))
    if b_hat < 0.0 or a_hat < 0.0:
        raise ContractViolation("flow proposals must be nonnegative")
    a_star = min(a_hat, l_prev)
    b_star = min(b_hat, c - (l_prev - a_star))
    l_phys = l_prev - a_star + b_star
    e_phys = (a_hat - a_star) + (b_hat - b_star)
    # guard float dust at the boundaries
    l_phys = min(max(l_phys, 0.0), c)
    return a_star, b_star, l_phys, e_phys


def e_phys_rate(traces: Iterable[StepTrace], eps: float = RESIDUAL_EPS) -> float:
    """Fraction of steps whose projection clipped something (e_phys > eps)."""
    traces = list(traces)
    if not traces:
        raise ContractViolation("e_phys_rate needs at least one trace")
    bad = sum(1 for t in traces if t.e_phys > eps)
    return bad / len(traces)
