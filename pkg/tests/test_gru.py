import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kstgcn.gru import (GruParams, SpeedTensor, forward_sequence, gru_gates, gru_step, gru_step_backward,
                        horizon_minutes, sigmoid, windows)
from kstgcn.kscell import KsCellParams
from kstgcn.trainer import check_gradient


def zero_params(d_in, d_h, horizon=1):
    z = lambda *s: np.zeros(s)  # noqa: E731
    return GruParams(z(d_in + d_h, d_h), z(d_h), z(d_in + d_h, d_h), z(d_h), z(d_in + d_h, d_h), z(d_h),
                     z(d_h, horizon), z(horizon))


def test_zero_weights_hand_value():
    h, u, r, c = gru_gates(np.zeros((1, 2)), np.array([[0.4]]), zero_params(2, 1))
    assert u[0, 0] == 0.5 and r[0, 0] == 0.5 and c[0, 0] == 0.0
    assert h[0, 0] == pytest.approx(0.2, abs=1e-15)


def test_update_gate_limits():
    rng = np.random.default_rng(0)
    prm = GruParams.init(3, 4, 2, rng)
    x, h_prev = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
    assert np.array_equal(gru_step(x, h_prev, prm, update_gate=1.0), h_prev)
    h0, _, _, c = gru_gates(x, h_prev, prm, update_gate=0.0)
    assert np.array_equal(h0, c)


def test_shape_mismatch_is_rejected():
    prm = GruParams.init(3, 4, 1)
    with pytest.raises(ValueError):
        gru_step(np.zeros((2, 2)), np.zeros((2, 4)), prm)
    with pytest.raises(ValueError):
        gru_step(np.zeros((2, 3)), np.zeros((2, 5)), prm)


def test_params_validate_shapes():
    prm = zero_params(2, 3, 2)
    with pytest.raises(ValueError):
        GruParams(prm.w_u, prm.b_u, prm.w_r, prm.b_r, prm.w_c, prm.b_c, np.zeros((2, 2)), prm.head_b)
    with pytest.raises(ValueError):
        GruParams(np.zeros((5, 2)), prm.b_u, prm.w_r, prm.b_r, prm.w_c, prm.b_c, prm.head_w, prm.head_b)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-30, 30)),
       arrays(np.float64, (4, 5), elements=st.floats(-1, 1)), st.integers(0, 2**31 - 1))
def test_gate_ranges(x, h_prev, seed):
    prm = GruParams.init(3, 5, 1, np.random.default_rng(seed))
    h, u, r, c = gru_gates(x, h_prev, prm)
    assert np.all((u >= 0) & (u <= 1)) and np.all((r >= 0) & (r <= 1))
    assert np.all(np.abs(c) <= 1)
    # h is a convex combination of h_prev and c
    lo, hi = np.minimum(h_prev, c), np.maximum(h_prev, c)
    assert np.all(h >= lo - 1e-12) and np.all(h <= hi + 1e-12)


def test_gates_strictly_inside_unit_interval_for_moderate_inputs():
    rng = np.random.default_rng(4)
    prm = GruParams.init(3, 5, 1, rng)
    _, u, r, c = gru_gates(rng.standard_normal((6, 3)), rng.uniform(-1, 1, (6, 5)), prm)
    assert np.all((u > 0) & (u < 1)) and np.all((r > 0) & (r < 1)) and np.all(np.abs(c) < 1)


def test_sigmoid_matches_logistic():
    x = np.linspace(-20, 20, 81)
    assert np.allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12)


def test_step_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    prm = GruParams.init(3, 4, 1, rng)
    prm.b_u, prm.b_r, prm.b_c = (rng.standard_normal(4) * 0.5 for _ in range(3))
    x, h_prev = rng.standard_normal((5, 3)), rng.uniform(-1, 1, (5, 4))
    g_h = rng.standard_normal((5, 4))
    grads = gru_step_backward(x, h_prev, prm, g_h)
    arrays_ = {"x_prime_t": x, "h_prev": h_prev, **{k: getattr(prm, k) for k in
                                                   ("w_u", "b_u", "w_r", "b_r", "w_c", "b_c")}}
    for name, arr in arrays_.items():
        def f(v, name=name, arr=arr):
            vals = {k: a.copy() for k, a in arrays_.items()}
            vals[name] = v.reshape(arr.shape)
            q = GruParams(vals["w_u"], vals["b_u"], vals["w_r"], vals["b_r"], vals["w_c"], vals["b_c"],
                          prm.head_w, prm.head_b)
            return float(np.sum(g_h * gru_step(vals["x_prime_t"], vals["h_prev"], q)))
        rep = check_gradient(f, grads[name].ravel(), arr.ravel().copy())
        assert rep.max_rel_error < 1e-4, (name, rep)


def cell_for(d_out, rng=None, **kw):
    return KsCellParams.init(1, 1, 3, d_out, rng=rng or np.random.default_rng(0), **kw)


def test_constant_head_predicts_bias():
    cell = cell_for(2)
    gru = GruParams.init(2, 3, 1, np.random.default_rng(1))
    gru.head_w = np.zeros((3, 1))
    gru.head_b = np.array([0.37])
    n = 4
    pred = forward_sequence(np.random.default_rng(2).random((4, n)), np.zeros((n, 1)), np.zeros((4, n, 1)),
                            np.eye(n), cell, gru)
    assert pred.shape == (n, 1) and np.all(pred == 0.37)


@pytest.mark.parametrize("horizon", [1, 2, 3, 4])
def test_output_shape_per_horizon(horizon):
    n = 5
    gru = GruParams.init(2, 3, horizon)
    pred = forward_sequence(np.ones((4, n)), np.zeros((n, 1)), np.zeros((4, n, 1)), np.eye(n), cell_for(2), gru)
    assert pred.shape == (n, horizon)
    assert horizon_minutes(horizon) == 15 * horizon


def test_repeated_input_hidden_state_differences_shrink():
    # small gate weights make the recurrence a contraction
    rng = np.random.default_rng(5)
    gru = GruParams.init(2, 3, 1, rng)
    for k in ("w_u", "w_r", "w_c"):
        setattr(gru, k, getattr(gru, k) * 0.3)
    n, w = 3, 12
    window = np.full((w, n), 0.6)
    cell = cell_for(2, gcn_act="identity")
    _, states = forward_sequence(window, np.ones((n, 1)), np.ones((w, n, 1)), np.eye(n), cell, gru,
                                 return_states=True)
    diffs = [np.linalg.norm(states[j] - states[j - 1]) for j in range(1, w)]
    assert diffs[0] > 0.01
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_identity_propagation_keeps_changes_local():
    n, w = 5, 4
    rng = np.random.default_rng(9)
    gru = GruParams.init(2, 3, 2, rng)
    cell = cell_for(2, rng)
    a = rng.random((w, n))
    b = a.copy()
    b[1, 3] += 0.5
    args = (np.zeros((n, 1)), np.zeros((w, n, 1)), np.eye(n), cell, gru)
    diff = np.any(forward_sequence(a, *args) != forward_sequence(b, *args), axis=1)
    assert diff.tolist() == [False, False, False, True, False]


def test_missing_knowledge_step_is_rejected():
    with pytest.raises(ValueError, match="dynamic knowledge"):
        forward_sequence(np.ones((4, 2)), np.zeros((2, 1)), np.zeros((3, 2, 1)), np.eye(2), cell_for(2),
                         GruParams.init(2, 3, 1))


def test_windows_stay_inside_bounds():
    assert windows(10, 4, 2).tolist() == [0, 1, 2, 3, 4]
    assert windows(10, 4, 2, 3, 9).tolist() == [3]
    assert windows(10, 4, 2, 5, 10).size == 0


def test_speed_tensor_csv_round_trip(tmp_path):
    st_ = SpeedTensor(np.array([[50.5, 20.0], [1 / 3, 79.9]]), ["a", "b"], [7, 8]).normalized()
    st_.save_csv(tmp_path / "speeds.csv")
    header = (tmp_path / "speeds.csv").read_text().splitlines()[0]
    assert header == "time_id,node_0,node_1"
    back = SpeedTensor.load_csv(tmp_path / "speeds.csv")
    assert np.array_equal(back.values, st_.values)
    assert back.bounds == st_.bounds and back.node_ids == ["a", "b"] and back.time_ids == [7, 8]
    assert np.allclose(back.raw().values, [[50.5, 20.0], [1 / 3, 79.9]])


def test_speed_tensor_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        SpeedTensor(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        SpeedTensor(np.ones((3, 2))).normalized()
    with pytest.raises(ValueError):
        SpeedTensor(np.arange(4.0).reshape(2, 2)).normalized().normalized()
    (tmp_path / "bad.csv").write_text("time_id,node_0\n0,1.0,2.0\n")
    with pytest.raises(ValueError, match="bad.csv:2"):
        SpeedTensor.load_csv(tmp_path / "bad.csv")
