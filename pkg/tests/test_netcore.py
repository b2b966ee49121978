import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlcsi import netcore as nc
from mtlcsi.errors import ShapeError

seeds = st.integers(0, 2**32 - 1)


def numeric_grad(loss, arr, step=1e-6):
    g = np.zeros_like(arr)
    for i in range(arr.size):
        old = arr.flat[i]
        arr.flat[i] = old + step
        up = loss()
        arr.flat[i] = old - step
        down = loss()
        arr.flat[i] = old
        g.flat[i] = (up - down) / (2 * step)
    return g


def max_rel(a, n):
    return float(np.max(nc.relative_error(a, n)))


# ---------------------------------------------------------------- dense


def test_fc_identity_and_constant():
    x = np.arange(12.0).reshape(3, 4)
    y, _ = nc.fc_forward(nc.DenseParams(np.eye(4), np.zeros(4)), x)
    np.testing.assert_array_equal(y, x)
    v = np.array([1.0, -2.0])
    y, _ = nc.fc_forward(nc.DenseParams(np.zeros((2, 4)), v), x)
    np.testing.assert_array_equal(y, np.tile(v, (3, 1)))
    with pytest.raises(ShapeError):
        nc.fc_forward(nc.DenseParams(np.zeros((2, 5)), v), x)


@settings(max_examples=100)
@given(seeds, st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))
def test_fc_gradients(seed, B, n_in, n_out):
    rng = np.random.default_rng(seed)
    p = nc.init_dense(rng, n_in, n_out)
    p.b[:] = rng.standard_normal(n_out)
    x = rng.standard_normal((B, n_in))
    R = rng.standard_normal((B, n_out))
    loss = lambda: float(np.sum(R * nc.fc_forward(p, x)[0]))
    _, cache = nc.fc_forward(p, x)
    g, dx = nc.fc_backward(p, cache, R)
    # the loss is affine in every coordinate, so a wide step has no truncation error
    for analytic, arr in ((g.W, p.W), (g.b, p.b), (dx, x)):
        assert max_rel(analytic, numeric_grad(loss, arr, step=1e-3)) < 1e-7


# ---------------------------------------------------------------- lstm


def test_lstm_zero_params_stay_zero():
    p = nc.LstmParams(np.zeros((16, 3)), np.zeros((16, 4)), np.zeros(16))
    x = np.random.default_rng(0).standard_normal((2, 5, 3))
    hs, h, c, _ = nc.lstm_forward(p, x)
    assert np.all(hs == 0) and np.all(h == 0) and np.all(c == 0)


def test_lstm_single_step_is_one_cell():
    rng = np.random.default_rng(1)
    p = nc.init_lstm(rng, 3, 4)
    x = rng.standard_normal((2, 1, 3))
    h0, c0 = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    _, h, c, _ = nc.lstm_forward(p, x, h0, c0)
    z = x[:, 0] @ p.W.T + h0 @ p.U.T + p.b
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, :4]), sig(z[:, 4:8]), np.tanh(z[:, 8:12]), sig(z[:, 12:])
    c_ref = f * c0 + i * g
    np.testing.assert_allclose(c, c_ref, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(h, o * np.tanh(c_ref), rtol=1e-13, atol=1e-15)


def test_lstm_init():
    p = nc.init_lstm(np.random.default_rng(0), 3, 4)
    assert p.W.shape == (16, 3) and p.U.shape == (16, 4)
    np.testing.assert_array_equal(p.b, np.r_[np.zeros(4), np.ones(4), np.zeros(8)])
    assert p.hidden_size == 4 and p.input_size == 3


def test_lstm_shape_errors():
    p = nc.init_lstm(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeError):
        nc.lstm_forward(p, np.zeros((2, 5, 2)))
    with pytest.raises(ShapeError):
        nc.lstm_forward(p, np.zeros((2, 5, 3)), h0=np.zeros((2, 3)))
    _, _, _, cache = nc.lstm_forward(p, np.zeros((2, 5, 3)))
    with pytest.raises(ShapeError):
        nc.lstm_backward(cache, dhs=np.zeros((2, 4, 4)))


def _lstm_case(seed, B, T, D, H):
    rng = np.random.default_rng(seed)
    p = nc.init_lstm(rng, D, H)
    p.b[:] = 0.5 * rng.standard_normal(4 * H)
    x = rng.standard_normal((B, T, D))
    h0, c0 = 0.5 * rng.standard_normal((B, H)), 0.5 * rng.standard_normal((B, H))
    Rs, Rh, Rc = rng.standard_normal((B, T, H)), rng.standard_normal((B, H)), rng.standard_normal((B, H))

    def loss():
        hs, h, c, _ = nc.lstm_forward(p, x, h0, c0)
        return float(np.sum(Rs * hs) + np.sum(Rh * h) + np.sum(Rc * c))

    return p, x, h0, c0, (Rs, Rh, Rc), loss


@settings(max_examples=100)
@given(seeds, st.integers(1, 3), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4))
def test_lstm_gradients(seed, B, T, D, H):
    p, x, h0, c0, (Rs, Rh, Rc), loss = _lstm_case(seed, B, T, D, H)
    _, _, _, cache = nc.lstm_forward(p, x, h0, c0)
    g, dx, dh0, dc0 = nc.lstm_backward(cache, Rs, Rh, Rc)
    for analytic, arr in ((g.W, p.W), (g.U, p.U), (g.b, p.b), (dx, x), (dh0, h0), (dc0, c0)):
        assert max_rel(analytic, numeric_grad(loss, arr)) < 1e-5


def test_lstm_gradients_reference_size():
    # D_in=3, H=4, T=5
    p, x, h0, c0, (Rs, Rh, Rc), loss = _lstm_case(7, 2, 5, 3, 4)
    _, _, _, cache = nc.lstm_forward(p, x, h0, c0)
    g, dx, _, _ = nc.lstm_backward(cache, Rs, Rh, Rc)
    assert max_rel(dx, numeric_grad(loss, x)) < 1e-5
    assert max_rel(g.U, numeric_grad(loss, p.U)) < 1e-5


def test_lstm_zero_upstream_and_additivity():
    rng = np.random.default_rng(3)
    p = nc.init_lstm(rng, 3, 4)
    x = rng.standard_normal((4, 5, 3))
    _, _, _, cache = nc.lstm_forward(p, x)
    g, dx, _, _ = nc.lstm_backward(cache, dh_last=np.zeros((4, 4)))
    assert not np.any(g.W) and not np.any(g.U) and not np.any(g.b) and not np.any(dx)
    dh = rng.standard_normal((4, 4))
    g_batch, _, _, _ = nc.lstm_backward(cache, dh_last=dh)
    total = [np.zeros_like(a) for a in (p.W, p.U, p.b)]
    for s in range(4):
        _, _, _, c1 = nc.lstm_forward(p, x[s : s + 1])
        gs, _, _, _ = nc.lstm_backward(c1, dh_last=dh[s : s + 1])
        for acc, a in zip(total, (gs.W, gs.U, gs.b)):
            acc += a
    for acc, a in zip(total, (g_batch.W, g_batch.U, g_batch.b)):
        np.testing.assert_allclose(acc, a, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------- conv stack


def test_conv_output_length_and_zero_input():
    rng = np.random.default_rng(0)
    p = nc.init_conv1d(rng, 9, 50, 6)
    out, cache = nc.conv1d_stack_forward(p, rng.standard_normal((2, 9, 10)))
    assert out.shape == (2, 50)
    assert cache.pre.shape == (2, 5, 50)
    p.bias[:] = 0
    _, cache = nc.conv1d_stack_forward(p, np.zeros((2, 9, 10)))
    assert not np.any(cache.pre)
    with pytest.raises(ShapeError):
        nc.conv1d_stack_forward(p, np.zeros((2, 9, 5)))


@settings(max_examples=100)
@given(seeds, st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 3))
def test_conv_gradients(seed, B, C, F, Wk, extra):
    rng = np.random.default_rng(seed)
    T = Wk + extra
    p = nc.init_conv1d(rng, C, F, Wk)
    p.bias[:] = rng.standard_normal(F)
    p.gain[:] = 1 + 0.3 * rng.standard_normal(F)
    p.offset[:] = 0.3 * rng.standard_normal(F)
    x = rng.standard_normal((B, C, T))
    R = rng.standard_normal((B, F))
    loss = lambda: float(np.sum(R * nc.conv1d_stack_forward(p, x)[0]))
    _, cache = nc.conv1d_stack_forward(p, x)
    g, dx = nc.conv1d_stack_backward(cache, R)
    # layer norm leaves input gradients tiny, so a 1e-6 step is roundoff-bound here
    for analytic, arr in ((g.filters, p.filters), (g.bias, p.bias), (g.gain, p.gain), (g.offset, p.offset), (dx, x)):
        assert max_rel(analytic, numeric_grad(loss, arr, step=1e-5)) < 1e-5


# ---------------------------------------------------------------- softmax / cross-entropy


def test_softmax_examples():
    np.testing.assert_allclose(nc.softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], rtol=1e-14)
    np.testing.assert_array_equal(nc.softmax(np.full(4, 3.7)), np.full(4, 0.25))
    assert np.all(np.isfinite(nc.softmax(np.array([1000.0, -1000.0, 0.0]))))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_probability_vector_and_shift(z, c):
    z = np.array(z)
    p = nc.softmax(z)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(nc.softmax(z + c), p, rtol=1e-9, atol=1e-15)


def test_cross_entropy_uniform_and_gradient():
    logits = np.zeros((6, 2, 4))
    labels = np.random.default_rng(0).integers(0, 4, size=(6, 2))
    loss, probs, d = nc.softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(12 * math.log(4), rel=1e-14)
    np.testing.assert_allclose(probs, 0.25)
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((3, 5))
    labels = rng.integers(0, 5, 3)
    _, _, d = nc.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: nc.softmax_cross_entropy(logits, labels)[0], logits)
    assert max_rel(d, num) < 1e-7
    with pytest.raises(ShapeError):
        nc.softmax_cross_entropy(logits, labels[:2])


# ---------------------------------------------------------------- optimiser


def test_lr_schedule():
    assert nc.lr_at(0) == 0.005
    assert abs(nc.lr_at(200) - 0.0025) < 1e-12
    rates = [nc.lr_at(n) for n in range(1000)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_adam_zero_gradient_is_fixed_point():
    params = {"a": np.array([1.0, -2.0]), "b": np.ones((2, 2))}
    before = {k: v.copy() for k, v in params.items()}
    state = nc.AdamState()
    for _ in range(3):
        nc.adam_step(state, params, {k: np.zeros_like(v) for k, v in params.items()}, 0.1)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_magnitude(g, sign):
    params = {"w": np.zeros(3)}
    nc.adam_step(nc.AdamState(), params, {"w": np.full(3, sign * g)}, 0.01)
    # bias-corrected moments give exactly lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"], -sign * 0.01 * g / (g + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(params["w"], -sign * 0.01, rtol=1e-5)


def test_adam_deterministic_and_shape_checked():
    rng = np.random.default_rng(0)
    params = {"w": rng.standard_normal(4)}
    grads = {"w": rng.standard_normal(4)}
    state = nc.AdamState()
    nc.adam_step(state, params, grads, 0.01)
    p1, p2 = {"w": params["w"].copy()}, {"w": params["w"].copy()}
    s1, s2 = state.copy(), state.copy()
    nc.adam_step(s1, p1, grads, 0.01)
    nc.adam_step(s2, p2, grads, 0.01)
    assert p1["w"].tobytes() == p2["w"].tobytes()
    assert s1.m["w"].shape == params["w"].shape
    with pytest.raises(ShapeError):
        nc.adam_step(state, params, {"w": np.zeros(5)}, 0.01)


# ---------------------------------------------------------------- gradient checker


def _quadratic(params):
    w = params["w"]
    return float(np.sum(w**3)), {"w": 3 * w**2}


def test_gradient_check_passes_and_reports_failure():
    params = {"w": np.random.default_rng(0).standard_normal(6)}
    good = nc.gradient_check(_quadratic, params)
    assert good.passed and good.num_checked == 6

    def broken(p):
        loss, g = _quadratic(p)
        g["w"] = g["w"] * 1.01
        return loss, g

    bad = nc.gradient_check(broken, params)
    assert not bad.passed and bad.max_rel_error > 1e-3
    assert bad.worst and "FAIL" in str(bad)
    again = nc.gradient_check(broken, params)
    assert again.max_rel_error == bad.max_rel_error and str(again) == str(bad)
