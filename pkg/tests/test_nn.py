import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meanet import nn
from meanet.errors import ContractError, InvalidInputError, ShapeError

finite = st.floats(-50, 50, allow_nan=False)


def _hand_softmax(z):
    e = [math.exp(v) for v in z]
    s = sum(e)
    return [v / s for v in e]


# --- softmax ---------------------------------------------------------------

def test_softmax_symmetric():
    np.testing.assert_array_equal(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_hand_values():
    expected = _hand_softmax([1, 2, 3])
    np.testing.assert_allclose(nn.softmax(np.array([1.0, 2.0, 3.0])), expected, atol=1e-12)
    np.testing.assert_allclose(expected, [0.09003, 0.24473, 0.66524], atol=1e-5)


@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_shift_invariant_and_normalised(z, c):
    p = nn.softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(nn.softmax(z + c), p, atol=1e-12)


def test_softmax_large_logits_stable():
    p = nn.softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5])


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(InvalidInputError):
        nn.softmax(np.array([0.0, bad]))


# --- entropy ---------------------------------------------------------------

def test_entropy_one_hot_is_zero():
    assert nn.entropy(np.array([0.0, 1.0, 0.0])) == 0.0


def test_entropy_uniform():
    assert nn.entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert math.log(4) == pytest.approx(1.38629, abs=1e-5)


def test_entropy_hand_value():
    p = [0.7, 0.2, 0.1]
    hand = -sum(v * math.log(v) for v in p)
    assert nn.entropy(np.array(p)) == pytest.approx(hand, abs=1e-12)
    assert hand == pytest.approx(0.80182, abs=1e-5)


@pytest.mark.parametrize("bad", [[0.5, 0.6], [-0.1, 1.1], [0.2, 0.2]])
def test_entropy_rejects_invalid(bad):
    with pytest.raises(InvalidInputError):
        nn.entropy(np.array(bad))


@given(arrays(np.float64, st.integers(1, 16), elements=finite))
def test_entropy_of_softmax_bounded(z):
    h = nn.entropy(nn.softmax(z))
    assert 0 <= h <= math.log(len(z)) + 1e-12


# --- cross-entropy ---------------------------------------------------------

def test_cross_entropy_hand_value():
    loss, grad = nn.cross_entropy_loss(np.array([1.0, 2.0, 3.0]), 0)
    hand = -math.log(_hand_softmax([1, 2, 3])[0])
    assert loss == pytest.approx(hand, abs=1e-12)
    assert loss == pytest.approx(2.40761, abs=1e-5)
    np.testing.assert_allclose(grad, np.array(_hand_softmax([1, 2, 3])) - [1, 0, 0], atol=1e-12)


def test_cross_entropy_uniform_is_log_k():
    loss, _ = nn.cross_entropy_loss(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7))


def test_cross_entropy_confident_limit():
    loss, _ = nn.cross_entropy_loss(np.array([500.0, 0.0, 0.0]), 0)
    assert loss < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        nn.cross_entropy_loss(np.zeros(3), 3)


def test_cross_entropy_batch_matches_single():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 4))
    y = np.array([0, 3, 1, 1, 2])
    loss, grad = nn.cross_entropy_batch(z, y)
    singles = [nn.cross_entropy_loss(z[i], y[i]) for i in range(5)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]))
    np.testing.assert_allclose(grad, np.stack([s[1] for s in singles]) / 5)


# --- forward / backward ----------------------------------------------------

def test_forward_identity_layer():
    layer = nn.DenseLayer(np.eye(3), np.zeros(3), "identity")
    x = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(nn.output_of(nn.forward([layer], x)), x)


def test_forward_zero_relu():
    layer = nn.DenseLayer(np.zeros((2, 3)), np.zeros(2), "relu")
    np.testing.assert_array_equal(nn.predict([layer], np.array([1.0, -1.0, 3.0])), [0.0, 0.0])


def test_forward_two_layers_by_hand():
    w1 = [[1.0, -1.0], [2.0, 0.5]]
    b1 = [0.5, -3.0]
    w2 = [[1.0, 2.0]]
    b2 = [0.25]
    x = [2.0, 1.0]
    # hand arithmetic: h = relu(w1 x + b1)
    h = [max(0.0, w1[r][0] * x[0] + w1[r][1] * x[1] + b1[r]) for r in range(2)]
    assert h == [1.5, 1.5]
    out = w2[0][0] * h[0] + w2[0][1] * h[1] + b2[0]
    layers = [nn.DenseLayer(w1, b1, "relu"), nn.DenseLayer(w2, b2, "identity")]
    assert nn.predict(layers, np.array(x))[0] == pytest.approx(out)


def test_forward_shape_mismatch():
    layers = [nn.DenseLayer(np.zeros((2, 3)), np.zeros(2)), nn.DenseLayer(np.zeros((1, 4)), np.zeros(1))]
    with pytest.raises(ShapeError):
        nn.forward(layers, np.zeros(3))


def test_backward_frozen_network_empty():
    rng = np.random.default_rng(1)
    layers = nn.build_mlp(3, [4, 2], rng)
    for l in layers:
        l.frozen = True
    trace = nn.forward(layers, rng.normal(size=(2, 3)))
    assert len(nn.backward(trace, np.ones((2, 2)))) == 0


def test_backward_linear_squared_loss_closed_form():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    x = rng.normal(size=3)
    target = rng.normal(size=2)
    layer = nn.DenseLayer(w.copy(), b.copy(), "identity")
    trace = nn.forward([layer], x)
    # L = 0.5 * ||Wx + b - t||^2  =>  dL/dW = r x^T, dL/db = r
    r = w @ x + b - target
    grads = nn.backward(trace, r)
    _, gw, gb = grads.params[0]
    np.testing.assert_allclose(gw, np.outer(r, x), atol=1e-14)
    np.testing.assert_allclose(gb, r, atol=1e-14)


def test_backward_stale_trace():
    rng = np.random.default_rng(3)
    layers = nn.build_mlp(3, [2], rng)
    trace = nn.forward(layers, np.ones(3))
    grads = nn.backward(trace, np.ones(2))
    nn.sgd_step(layers, grads, 0, nn.SgdConfig(momentum=0.0))
    with pytest.raises(ContractError):
        nn.backward(trace, np.ones(2))


def test_backward_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    layers = nn.build_mlp(4, [5, 3], rng, ["relu", "identity"])
    x = rng.normal(size=(2, 4))
    y = np.array([0, 2])
    trace = nn.forward(layers, x)
    _, g = nn.cross_entropy_batch(trace.output, y)
    gin = nn.backward(trace, g, need_input_grad=True).input
    eps = 1e-5
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num[idx] = (nn.cross_entropy_batch(nn.predict(layers, xp), y)[0]
                    - nn.cross_entropy_batch(nn.predict(layers, xm), y)[0]) / (2 * eps)
    assert nn.max_relative_error(gin, num) < 1e-4


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.lists(st.integers(1, 32), min_size=0, max_size=2),
    st.integers(1, 12),
    st.integers(2, 6),
)
def test_gradient_check_random_networks(seed, hidden, n_in, n_out):
    rng = np.random.default_rng(seed)
    widths = hidden + [n_out]
    layers = nn.build_mlp(n_in, widths, rng, ["relu"] * len(hidden) + ["identity"])
    for l in layers:
        l.bias += rng.normal(0, 0.1, size=l.bias.shape)
    x = rng.normal(size=(3, n_in))
    y = rng.integers(0, n_out, size=3)
    assert nn.gradient_check(layers, x, y) < 1e-4


def test_gradient_check_skips_frozen_prefix():
    rng = np.random.default_rng(5)
    layers = nn.build_mlp(4, [6, 3], rng, ["relu", "identity"])
    layers[0].frozen = True
    trace = nn.forward(layers, rng.normal(size=(2, 4)))
    grads = nn.backward(trace, np.ones((2, 3)))
    assert [id(l) for l, _, _ in grads.params] == [id(layers[1])]
    assert nn.gradient_check(layers, rng.normal(size=(2, 4)), np.array([0, 1])) < 1e-4


# --- SGD -------------------------------------------------------------------

def test_lr_schedule_milestones():
    cfg = nn.SgdConfig(initial_lr=0.1, milestones=(60, 120, 160), decay_factor=0.1)
    assert cfg.lr_at(59) == pytest.approx(0.1)
    assert cfg.lr_at(60) == pytest.approx(0.01)
    assert cfg.lr_at(119) == pytest.approx(0.01)
    assert cfg.lr_at(160) == pytest.approx(1e-4)


def test_sgd_zero_gradient_no_change():
    rng = np.random.default_rng(6)
    layers = nn.build_mlp(3, [2], rng)
    before = layers[0].weights.copy()
    grads = nn.Gradients([(layers[0], np.zeros((2, 3)), np.zeros(2))])
    nn.Sgd(layers, nn.SgdConfig()).step(grads, 0)
    np.testing.assert_array_equal(layers[0].weights, before)


def test_sgd_single_step_exact():
    layer = nn.DenseLayer(np.ones((1, 2)), np.zeros(1))
    g = np.array([[0.5, -1.0]])
    nn.sgd_step([layer], nn.Gradients([(layer, g, np.array([2.0]))]), 0,
                nn.SgdConfig(initial_lr=0.1, momentum=0.0))
    np.testing.assert_array_equal(layer.weights, np.ones((1, 2)) - 0.1 * g)
    np.testing.assert_array_equal(layer.bias, [-0.2])


def test_sgd_momentum_accumulates():
    layer = nn.DenseLayer(np.zeros((1, 1)), np.zeros(1))
    opt = nn.Sgd([layer], nn.SgdConfig(initial_lr=1.0, momentum=0.5))
    for _ in range(2):
        opt.step(nn.Gradients([(layer, np.ones((1, 1)), np.zeros(1))]), 0)
    # v1 = 1, v2 = 0.5 + 1 = 1.5 => w = -(1 + 1.5)
    assert layer.weights[0, 0] == -2.5


def test_sgd_rejects_frozen_or_foreign_gradients():
    rng = np.random.default_rng(7)
    layers = nn.build_mlp(3, [2, 2], rng)
    layers[0].frozen = True
    bad = nn.Gradients([(layers[0], np.zeros((2, 3)), np.zeros(2))])
    with pytest.raises(ContractError):
        nn.sgd_step(layers, bad, 0, nn.SgdConfig())
    stranger = nn.DenseLayer(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ContractError):
        nn.sgd_step(layers, nn.Gradients([(stranger, np.zeros((2, 2)), np.zeros(2))]), 0, nn.SgdConfig())


@pytest.mark.parametrize("kwargs", [
    {"initial_lr": 0}, {"milestones": (5, 2)}, {"decay_factor": 1.0}, {"momentum": 1.0},
])
def test_sgd_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        nn.SgdConfig(**kwargs)
