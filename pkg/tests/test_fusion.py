from __future__ import annotations

import math

import numpy as np
import pytest

from paxload.core import Capacity
from paxload.errors import ContractViolation
from paxload.fusion import TrustParams, disagreement, fuse, trust_weight

from oracles import logistic_trust

C80 = Capacity(80)
P = TrustParams()


def test_invalid_anchor_gives_full_recursion_weight():
    assert trust_weight(0, 0.0, 0.0, P) == 1.0
    assert trust_weight(0, 123.0, 456.0, P) == 1.0


def test_perfect_agreement_gives_balanced_weight():
    assert trust_weight(1, 0.0, 0.0, P) == 0.5


def test_weight_at_one_disagreement_scale():
    # d = s_d, e = 0  =>  alpha = 1 / (1 + exp(-1))
    expected = 1.0 / (1.0 + math.exp(-1.0))
    assert trust_weight(1, P.s_d, 0.0, P) == pytest.approx(expected, abs=1e-15)
    assert trust_weight(1, P.s_d, 0.0, P) == pytest.approx(0.7310585786300049, abs=1e-12)


def test_weight_matches_scalar_rederivation():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = float(rng.uniform(0, 60))
        e = float(rng.uniform(0, 30))
        assert trust_weight(1, d, e, P) == pytest.approx(
            logistic_trust(d, e, P.s_d, P.s_e), abs=1e-14)


def test_weight_bounds_for_valid_anchor():
    rng = np.random.default_rng(5)
    for _ in range(2_000):
        d = float(rng.uniform(0, 500))
        e = float(rng.uniform(0, 500))
        alpha = trust_weight(1, d, e, P)
        assert 0.5 <= alpha <= 1.0


def test_weight_strictly_increases_in_each_signal():
    ds = np.linspace(0.0, 50.0, 25)
    es = np.linspace(0.0, 25.0, 25)
    for e in es:
        alphas = [trust_weight(1, d, float(e), P) for d in ds]
        assert all(b > a for a, b in zip(alphas, alphas[1:]))
    for d in ds:
        alphas = [trust_weight(1, float(d), e, P) for e in es]
        assert all(b > a for a, b in zip(alphas, alphas[1:]))


def test_weight_rejects_bad_inputs():
    with pytest.raises(ContractViolation):
        trust_weight(2, 0.0, 0.0, P)
    with pytest.raises(ContractViolation):
        trust_weight(1, -1.0, 0.0, P)
    with pytest.raises(ContractViolation):
        TrustParams(s_d=0.0)


def test_fuse_blends_convexly():
    assert fuse(10.0, 20.0, 0.75, C80) == pytest.approx(12.5)
    assert fuse(10.0, 20.0, 1.0, C80) == 10.0
    assert fuse(10.0, 20.0, 0.0, C80) == 20.0


def test_fuse_clamps_to_capacity():
    assert fuse(70.0, 200.0, 0.5, C80) == 80.0


def test_fuse_without_anchor_passes_state_through():
    assert fuse(33.25, None, 1.0, C80) == 33.25
    with pytest.raises(ContractViolation):
        fuse(33.25, None, 0.5, C80)


def test_fuse_rejects_bad_alpha_or_anchor():
    with pytest.raises(ContractViolation):
        fuse(10.0, 20.0, 1.5, C80)
    with pytest.raises(ContractViolation):
        fuse(10.0, -3.0, 0.5, C80)


def test_fuse_output_always_in_bounds():
    rng = np.random.default_rng(17)
    for _ in range(5_000):
        l_phys = float(rng.uniform(0, 80))
        y = float(rng.uniform(0, 300))
        alpha = float(rng.uniform(0, 1))
        assert 0.0 <= fuse(l_phys, y, alpha, C80) <= 80.0


def test_disagreement_is_absolute_gap():
    assert disagreement(10.0, 14.0) == 4.0
    assert disagreement(14.0, 10.0) == 4.0
    assert disagreement(7.0, 7.0) == 0.0
