import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv2d, naive_maxpool2
from vicnn import zoo
from vicnn.engine import (
    AdamState,
    ConvParams,
    adam_step,
    backward,
    conv2d_backward,
    conv2d_forward,
    forward,
    identity_params,
    init_params,
    maxpool2,
    maxpool2_backward,
    mse_loss,
    predict,
    relu,
    relu_backward,
    sigmoid,
    upsample_nearest2,
)
from vicnn.engine.gradcheck import check_conv, check_network, run_all
from vicnn.errors import ShapeError

KERNELS = (1, 3, 5, 7, 11, 15)
RATES = (1, 2, 4, 8)


@pytest.mark.parametrize("k", KERNELS)
@pytest.mark.parametrize("stride", RATES)
@pytest.mark.parametrize("dilation", RATES)
def test_conv_matches_naive_oracle(k, stride, dilation):
    rng = np.random.default_rng(k * 100 + stride * 10 + dilation)
    x = rng.normal(size=(2, 3, 11, 10))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = conv2d_forward(x, ConvParams(w, b, stride, dilation))
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, dilation), atol=1e-5, rtol=0)


def test_conv_float32_close_to_oracle():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (2, 3, 16, 16)).astype(np.float32)
    w = (rng.normal(size=(8, 3, 5, 5)) * 0.1).astype(np.float32)
    b = rng.normal(size=8).astype(np.float32)
    got = conv2d_forward(x, ConvParams(w, b))
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, naive_conv2d(x, w, b), atol=1e-5)


def test_conv_same_padding_preserves_size():
    x = np.zeros((3, 128, 128))
    for k in KERNELS:
        for d in RATES:
            p = ConvParams(np.zeros((2, 3, k, k)), np.zeros(2), 1, d)
            assert conv2d_forward(x, p).shape == (2, 128, 128)


def test_conv_rejects_bad_geometry():
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((2, 3, 4, 4)), np.zeros(2))
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((2, 3, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((2, 3, 3, 3)), np.zeros(2), stride=0)
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((4, 8, 8)), ConvParams(np.zeros((2, 3, 3, 3)), np.zeros(2)))


@pytest.mark.parametrize("k,d,s", [(3, 1, 1), (5, 2, 1), (3, 1, 2), (7, 4, 2), (15, 8, 4)])
def test_conv_gradients(k, d, s):
    for r in check_conv(np.random.default_rng(k + d + s), k, d, s):
        assert r.ok, r


def test_conv_backward_without_input_grad():
    rng = np.random.default_rng(1)
    x, g = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(2, 4, 8, 8))
    p = ConvParams(rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4))
    gx, gw, gb = conv2d_backward(x, p, g, need_input_grad=False)
    _, gw2, gb2 = conv2d_backward(x, p, g)
    assert gx is None
    np.testing.assert_array_equal(gw, gw2)
    np.testing.assert_array_equal(gb, gb2)


def test_gradcheck_table_single_seed():
    results = run_all(seed=3)
    assert results and all(r.ok for r in results), [r for r in results if not r.ok]


def test_sigmoid_is_stable_and_bounded():
    x = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        y = sigmoid(x)
    assert y[2] == 0.5
    assert np.all((y >= 0) & (y <= 1))
    np.testing.assert_allclose(y, 1 / (1 + np.exp(-np.clip(x, -700, 700))), atol=1e-300)


def test_relu_subgradient_at_zero_is_zero():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(x), [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(x, np.ones(3)), [0, 0, 1])


def test_maxpool_matches_oracle_and_first_max_wins():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 6, 8))
    np.testing.assert_array_equal(maxpool2(x)[0], naive_maxpool2(x))
    tie = np.ones((1, 1, 2, 2))
    out, idx = maxpool2(tie)
    assert idx[0, 0, 0, 0] == 0
    g = maxpool2_backward(idx, np.ones_like(out))
    np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])
    with pytest.raises(ShapeError):
        maxpool2(np.zeros((1, 1, 3, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_upsample_inverts_pool_on_block_constant(c, h, w, seed):
    low = np.random.default_rng(seed).normal(size=(c, h, w))
    x = upsample_nearest2(low)
    np.testing.assert_array_equal(upsample_nearest2(maxpool2(x)[0]), x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mse_nonnegative_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 4, 4))
    b = a.copy()
    assert mse_loss(a, b)[0] == 0.0
    b[0, 0, 0, 0] += 1e-3
    loss, grad = mse_loss(a, b)
    assert loss > 0
    assert grad.shape == a.shape


def test_adam_first_step_is_learning_rate():
    p = [np.array([1.0])]
    state = AdamState.for_params(p, lr=0.01)
    adam_step(p, [np.array([3.7])], state)
    assert p[0][0] == pytest.approx(1.0 - 0.01, rel=1e-6)
    assert state.step == 1


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(4)
    p = [rng.normal(size=5)]
    ref = p[0].copy()
    m = np.zeros(5)
    v = np.zeros(5)
    state = AdamState.for_params(p, lr=1e-3)
    for t in range(1, 6):
        g = rng.normal(size=5)
        adam_step(p, [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p[0], ref, rtol=1e-12)


def test_identity_model_passes_input_through():
    spec = zoo.build_identity(16)
    x = np.random.default_rng(5).uniform(0, 1, (3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(predict(spec, identity_params(spec), x), x)


def test_zero_weights_give_constant_bias_output():
    spec = zoo.build_base_net(5, 16)
    params = [np.zeros_like(p) for p in init_params(spec)]
    params[-1][:] = [0.1, 0.2, 0.3]
    out = predict(spec, params, np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32))
    for c, b in enumerate([0.1, 0.2, 0.3]):
        np.testing.assert_allclose(out[c], b, rtol=1e-6)


def test_linear_output_layer_is_unbounded():
    spec = zoo.build_base_net(5, 16)
    params = init_params(spec, 0)
    params[2] *= 100
    out = predict(spec, params, np.ones((3, 16, 16), np.float32))
    assert out.min() < 0 or out.max() > 1


def test_forward_backward_deterministic():
    spec = zoo.build_jain2009_residual(size=16)
    params = init_params(spec, 9)
    x = np.random.default_rng(9).uniform(size=(2, 3, 16, 16)).astype(np.float32)
    runs = []
    for _ in range(2):
        out, tape = forward(spec, params, x)
        runs.append((out, backward(spec, params, tape, out - x)))
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_forward_rejects_wrong_input_and_param_count():
    spec = zoo.build_base_net(5, 16)
    params = init_params(spec)
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros((3, 8, 8), np.float32))
    with pytest.raises(ShapeError):
        forward(spec, params[:2], np.zeros((3, 16, 16), np.float32))


def test_glorot_init_bounds_and_seed():
    spec = zoo.build_base_net(5, 16)
    a, b = init_params(spec, 1), init_params(spec, 1)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    limit = np.sqrt(6 / (3 * 25 + 8 * 25))
    assert np.abs(a[0]).max() <= limit
    assert np.all(a[1] == 0)


@pytest.mark.parametrize("builder", [zoo.build_jain2009_pool, lambda size: zoo.build_deep_residual_denoiser(3, size, 4)])
def test_network_gradients_with_kinks(builder):
    for r in check_network(builder(size=8), np.random.default_rng(11)):
        assert r.ok and r.n_checked > 0, r
