from __future__ import annotations

import numpy as np
import pytest

from paxload.core import StopEvent, Trip
from paxload.errors import InputError
from paxload.perception import (
    BaggedTreeRegressor,
    ForestParams,
    ReplayPredictor,
    fit_flow_predictor,
)

FAST = ForestParams(n_trees=20, max_depth=8)


def _toy_data(n=600, seed=0):
    rng = np.random.default_rng(seed)
    x = np.column_stack([
        rng.poisson(6, n).astype(float),
        rng.poisson(4, n).astype(float),
        rng.uniform(-1, 1, n),
        rng.integers(0, 2, n).astype(float),
    ])
    yb = x[:, 0] + 0.5 * x[:, 3] + rng.normal(0, 0.5, n)
    ya = x[:, 1] - 0.3 * x[:, 3] + rng.normal(0, 0.5, n)
    return x, yb, np.maximum(ya, 0.0)


def test_constant_targets_are_reproduced_exactly():
    x, _, _ = _toy_data(200)
    yb = np.full(200, 7.0)
    ya = np.full(200, 3.0)
    m = fit_flow_predictor(x, yb, ya, None, FAST)
    b, a = m.predict(x)
    assert np.allclose(b, 7.0, atol=1e-12)
    assert np.allclose(a, 3.0, atol=1e-12)


def test_predictions_nonnegative_and_deterministic():
    x, yb, ya = _toy_data()
    m = fit_flow_predictor(x, yb - 10.0, ya - 10.0, None, FAST)
    b1, a1 = m.predict(x)
    b2, a2 = m.predict(x)
    assert (b1 >= 0.0).all() and (a1 >= 0.0).all()
    assert np.array_equal(b1, b2) and np.array_equal(a1, a2)


def test_same_seed_same_model_twice():
    x, yb, ya = _toy_data()
    m1 = fit_flow_predictor(x, yb, ya, None, FAST)
    m2 = fit_flow_predictor(x, yb, ya, None, FAST)
    b1, _ = m1.predict(x)
    b2, _ = m2.predict(x)
    assert np.array_equal(b1, b2)


def test_training_order_does_not_change_model():
    x, yb, ya = _toy_data()
    perm = np.random.default_rng(9).permutation(len(yb))
    m1 = fit_flow_predictor(x, yb, ya, None, FAST)
    m2 = fit_flow_predictor(x[perm], yb[perm], ya[perm], None, FAST)
    probe = _toy_data(100, seed=5)[0]
    assert np.array_equal(m1.predict(probe)[0], m2.predict(probe)[0])
    assert np.array_equal(m1.predict(probe)[1], m2.predict(probe)[1])


def test_uniformly_doubled_weights_give_identical_model():
    x, yb, ya = _toy_data()
    m1 = fit_flow_predictor(x, yb, ya, np.ones(len(yb)), FAST)
    m2 = fit_flow_predictor(x, yb, ya, np.full(len(yb), 2.0), FAST)
    probe = _toy_data(100, seed=5)[0]
    assert np.array_equal(m1.predict(probe)[0], m2.predict(probe)[0])
    assert np.array_equal(m1.predict(probe)[1], m2.predict(probe)[1])


def test_weights_steer_the_fit_toward_heavy_samples():
    # two clusters with contradicting targets; weight one cluster up
    n = 400
    x = np.zeros((n, 2))
    x[:, 0] = np.repeat([0.0, 1.0], n // 2)
    x[:, 1] = np.tile([0.0, 1.0], n // 2)   # uninformative
    yb = np.repeat([2.0, 10.0], n // 2)
    w_flat = np.ones(n)
    w_heavy = np.where(x[:, 0] > 0.5, 25.0, 1.0)
    m_flat = fit_flow_predictor(x, yb, yb, w_flat, FAST)
    m_heavy = fit_flow_predictor(x, yb, yb, w_heavy, FAST)
    probe = np.array([[0.0, 0.5], [1.0, 0.5]])
    # heavy cluster keeps its own target; the model must not blur it away
    assert abs(m_heavy.predict(probe)[0][1] - 10.0) < 0.5
    assert abs(m_flat.predict(probe)[0][1] - 10.0) < 0.5
    # remove signal feature: weighted mean must move toward the heavy cluster
    x0 = np.zeros((n, 1))
    m0_flat = fit_flow_predictor(x0, yb, yb, w_flat, FAST)
    m0_heavy = fit_flow_predictor(x0, yb, yb, w_heavy, FAST)
    flat_mean = m0_flat.predict(np.zeros((1, 1)))[0][0]
    heavy_mean = m0_heavy.predict(np.zeros((1, 1)))[0][0]
    assert heavy_mean > flat_mean + 2.0


def test_zero_weight_samples_are_ignored():
    x, yb, ya = _toy_data(300)
    w = np.ones(300)
    w[:100] = 0.0
    m1 = fit_flow_predictor(x, yb, ya, w, FAST)
    m2 = fit_flow_predictor(x[100:], yb[100:], ya[100:], np.ones(200), FAST)
    probe = _toy_data(50, seed=5)[0]
    assert np.allclose(m1.predict(probe)[0], m2.predict(probe)[0], atol=1e-12)


def test_serialization_round_trip(tmp_path):
    x, yb, ya = _toy_data()
    m = fit_flow_predictor(x, yb, ya, None, FAST)
    path = str(tmp_path / "model.npz")
    m.save(path)
    loaded = BaggedTreeRegressor.load(path)
    b1, a1 = m.predict(x)
    b2, a2 = loaded.predict(x)
    assert np.array_equal(b1, b2) and np.array_equal(a1, a2)
    assert loaded.params == m.params


def test_load_rejects_unknown_format(tmp_path):
    path = str(tmp_path / "bad.npz")
    np.savez(path, header=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(InputError):
        BaggedTreeRegressor.load(path)


def test_fit_input_validation():
    x, yb, ya = _toy_data(50)
    with pytest.raises(InputError):
        fit_flow_predictor(x[:0], yb[:0], ya[:0], None, FAST)
    with pytest.raises(InputError):
        fit_flow_predictor(x, yb[:-1], ya, None, FAST)
    with pytest.raises(InputError):
        fit_flow_predictor(x, yb, ya, -np.ones(50), FAST)
    with pytest.raises(InputError):
        fit_flow_predictor(x, yb, ya, np.zeros(50), FAST)
    m = fit_flow_predictor(x, yb, ya, None, FAST)
    with pytest.raises(InputError):
        m.predict(np.ones((3, 99)))
    with pytest.raises(InputError):
        m.predict(np.array([[np.nan] * x.shape[1]]))
    with pytest.raises(InputError):
        m.propose(None, None)


def test_replay_predictor_returns_recorded_flows():
    stops = []
    flows = [(7, 0, 7), (3, 2, 8), (0, 8, 0)]
    for k, (b, a, load) in enumerate(flows):
        stops.append(StopEvent(
            trip_id="t", stop_index=k, stop_id="s%d" % k, timestamp=100.0 * k,
            hour_bin=9, apc_board_raw=99, apc_alight_raw=99, mc_board=b,
            mc_alight=a, mc_load=load, wifi_count=None, wifi_valid=0,
            weather=(0.0,), occupancy_prior=0.0, poi_density=(1.0,)))
    trip = Trip("t", tuple(stops))
    b, a = ReplayPredictor().propose(trip)
    assert b.tolist() == [7.0, 3.0, 0.0]
    assert a.tolist() == [0.0, 2.0, 8.0]
