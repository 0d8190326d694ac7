import math

import numpy as np
import pytest

from core.nn.features import FeatureMode, FeatureSpec
from core.nn.networks import (
    ARCHITECTURES,
    LstmNetwork,
    MlpNetwork,
    SgdConfig,
    build_network,
    hinge_loss,
    loss_hinge,
    sgd_step,
)
from core.utils.exceptions import ConfigurationError, PoisonedRunError

HIDDEN = 8
WINDOW = 5


def _spec(mode=FeatureMode.MODEL_BASED, window=WINDOW) -> FeatureSpec:
    return FeatureSpec(mode=mode, window=window)


def _numeric_gradient(net, X, labels, epsilon, name, index, h=1e-5):
    value = net.params[name]
    original = value[index]
    value[index] = original + h
    plus = hinge_loss(net.forward(X), labels, epsilon)[0]
    value[index] = original - h
    minus = hinge_loss(net.forward(X), labels, epsilon)[0]
    value[index] = original
    return (plus - minus) / (2.0 * h)


@pytest.mark.parametrize('arch', sorted(ARCHITECTURES))
def test_gradients_match_finite_differences(arch, rng):
    spec = _spec()
    net = build_network(arch, spec, HIDDEN, rng)
    X = rng.standard_normal((3, WINDOW, spec.step_width))
    # Rótulos longe das previsões: a perda hinge fica diferenciável.
    labels = np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0]]) * 3.0 - 1.0
    epsilon = 0.01

    _loss, grads = net.backward(X, labels, epsilon)
    for name, value in net.params.items():
        for index in np.ndindex(value.shape):
            numeric = _numeric_gradient(net, X, labels, epsilon, name, index)
            analytic = grads[name][index]
            scale = max(abs(numeric), abs(analytic), 1e-5)
            assert abs(numeric - analytic) / scale <= 1e-4, name


@pytest.mark.parametrize('arch', sorted(ARCHITECTURES))
def test_forward_shapes_and_range(arch, rng):
    spec = _spec(FeatureMode.MODEL_FREE)
    net = build_network(arch, spec, HIDDEN, rng)
    batch = net.forward(rng.standard_normal((7, WINDOW, spec.step_width)))
    single = net.forward(rng.standard_normal((WINDOW, spec.step_width)))

    assert batch.shape == (7, 4)
    assert single.shape == (1, 4)
    assert np.all((batch > 0) & (batch < 1))


def test_forward_rejects_wrong_shape(rng):
    net = build_network('lstm', _spec(FeatureMode.MODEL_FREE), HIDDEN, rng)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, WINDOW + 1, 10)))


def test_hinge_loss_is_zero_inside_margin():
    pred = np.array([[0.5, 0.5, 0.5, 0.5]])
    loss, d_pred = hinge_loss(pred, pred + 0.001, epsilon=0.01)
    assert loss == 0.0
    np.testing.assert_array_equal(d_pred, 0.0)
    assert loss_hinge(np.zeros(4), np.array([0.0, 0.0, 0.0, 1.0]), 0.01) == pytest.approx(0.99)


def test_poisoned_parameters_abort(rng):
    net = build_network('mlp', _spec(FeatureMode.MODEL_FREE), HIDDEN, rng)
    net.params['fc0.W'][0, 0] = np.nan
    X = rng.standard_normal((2, WINDOW, 10))
    with pytest.raises(PoisonedRunError) as excinfo:
        net.backward(X, np.zeros((2, 4)), 0.01)
    assert excinfo.value.diagnostics['batch_size'] == 2


def test_build_network_validation(rng):
    with pytest.raises(ConfigurationError):
        build_network('transformer', _spec(), HIDDEN, rng)
    with pytest.raises(ConfigurationError):
        build_network('mlp', _spec(), 1, rng)


def test_initialization_is_seeded():
    first = build_network('lstm', _spec(), HIDDEN, np.random.default_rng(3))
    second = build_network('lstm', _spec(), HIDDEN, np.random.default_rng(3))
    for name in first.params:
        np.testing.assert_array_equal(first.params[name], second.params[name])


def test_single_window_is_memorized(rng):
    net = build_network('mlp', _spec(FeatureMode.MODEL_FREE), HIDDEN, rng)
    X = rng.standard_normal((1, WINDOW, 10))
    label = np.array([[0.8, 0.2, 0.8, 0.8]])
    cfg = SgdConfig(learning_rate=1.0, batch_size=1)

    loss = np.inf
    for _iteration in range(5000):
        loss, grads = net.backward(X, label, epsilon=0.1)
        if loss == 0.0:
            break
        sgd_step(net, grads, cfg)
    assert loss == 0.0


def test_sgd_step_with_zero_learning_rate_keeps_weights(rng):
    net = build_network('mlp', _spec(FeatureMode.MODEL_FREE), HIDDEN, rng)
    before = net.copy()
    grads = {name: np.ones_like(value) for name, value in net.params.items()}
    sgd_step(net, grads, SgdConfig(learning_rate=0.0))
    for name in net.params:
        np.testing.assert_array_equal(net.params[name], before.params[name])


def test_sgd_config_validation():
    with pytest.raises(ConfigurationError):
        SgdConfig(learning_rate=-1.0)
    with pytest.raises(ConfigurationError):
        SgdConfig(batch_size=0)


def test_hinge_loss_at_margin_boundary():
    zeros = np.zeros((1, 4))
    loss, d_pred = hinge_loss(np.array([[0.5, 0.0, 0.0, 0.0]]), zeros, epsilon=0.5)
    assert loss == 0.0
    np.testing.assert_array_equal(d_pred, 0.0)

    loss, d_pred = hinge_loss(np.array([[0.0, 0.0, 0.75, 0.0]]), zeros, epsilon=0.5)
    assert loss == pytest.approx(0.25)
    np.testing.assert_allclose(d_pred, [[0.0, 0.0, 1.0, 0.0]])


def _sigmoid(value: float) -> float:
    return 1.0 / (1.0 + math.exp(-value))


def _dense(params, name, inputs, activation):
    W, b = params[f'{name}.W'], params[f'{name}.b']
    return [activation(sum(inputs[i] * W[i, j] for i in range(len(inputs))) + b[j]) for j in range(W.shape[1])]


def test_lstm_single_step_matches_hand_computation(rng):
    hidden = 2
    spec = FeatureSpec(mode=FeatureMode.RESIDUAL_ONLY, window=1)
    net = build_network('lstm', spec, hidden, rng)
    x = rng.standard_normal(spec.step_width)
    p = net.params

    z = [sum(x[i] * p['lstm.Wx'][i, j] for i in range(spec.step_width)) + p['lstm.b'][j] for j in range(4 * hidden)]
    h = []
    for k in range(hidden):
        gate_i = _sigmoid(z[k])
        gate_g = math.tanh(z[2 * hidden + k])
        gate_o = _sigmoid(z[3 * hidden + k])
        h.append(gate_o * math.tanh(gate_i * gate_g))
    a0 = _dense(p, 'fc0', h, math.tanh)
    a1 = _dense(p, 'fc1', a0, math.tanh)
    expected = _dense(p, 'out', a1, _sigmoid)

    np.testing.assert_allclose(net.forward(x[None, :])[0], expected, rtol=1e-12, atol=1e-14)


def test_mlp_matches_naive_layers(rng):
    spec = FeatureSpec(mode=FeatureMode.MODEL_FREE, window=2)
    net = build_network('mlp', spec, 4, rng)
    X = rng.standard_normal((spec.window, spec.step_width))

    activations = list(X.reshape(-1))
    for name in MlpNetwork.LAYERS[:-1]:
        activations = _dense(net.params, name, activations, math.tanh)
    expected = _dense(net.params, 'out', activations, _sigmoid)

    np.testing.assert_allclose(net.forward(X)[0], expected, rtol=1e-12, atol=1e-14)


def test_lstm_remembers_first_step(rng):
    spec = _spec(FeatureMode.MODEL_FREE)
    net = build_network('lstm', spec, HIDDEN, rng)
    # Porta de esquecimento quase aberta.
    net.params['lstm.b'][HIDDEN : 2 * HIDDEN] = 6.0
    X = rng.standard_normal((1, WINDOW, spec.step_width))
    changed = X.copy()
    changed[0, 0] += 3.0

    assert isinstance(net, LstmNetwork)
    assert np.max(np.abs(net.forward(X) - net.forward(changed))) > 1e-6


def test_lstm_input_weights_scale_with_step_width():
    spec = _spec(FeatureMode.MODEL_BASED)
    net = build_network('lstm', spec, 64, np.random.default_rng(0))
    assert np.max(np.abs(net.params['lstm.Wx'])) <= 1.0 / np.sqrt(spec.step_width)
    assert np.max(np.abs(net.params['lstm.Wx'])) > 1.0 / np.sqrt(64)


def test_sgd_step_descends_a_quadratic(rng):
    net = build_network('mlp', _spec(FeatureMode.MODEL_FREE), HIDDEN, rng)
    before = net.copy()

    def energy(network):
        return 0.5 * sum(float(np.sum(value * value)) for value in network.params.values())

    grads = {name: value.copy() for name, value in net.params.items()}
    sgd_step(net, grads, SgdConfig(learning_rate=0.1))

    for name, value in net.params.items():
        np.testing.assert_allclose(value, 0.9 * before.params[name], rtol=1e-14)
    assert energy(net) == pytest.approx(0.81 * energy(before), rel=1e-12)
