import numpy as np
import pytest

from core.nn.features import FeatureMode, FeatureSpec
from core.utils.exceptions import ConfigurationError


@pytest.mark.parametrize(
    ('mode', 'width'),
    [(FeatureMode.MODEL_FREE, 10), (FeatureMode.MODEL_BASED, 16), (FeatureMode.RESIDUAL_ONLY, 6)],
)
def test_step_width_per_mode(mode, width):
    spec = FeatureSpec(mode=mode, window=4)
    assert spec.step_width == width
    assert spec.flat_width == 4 * width


def test_channels_are_ordered_outputs_inputs_residuals():
    spec = FeatureSpec(mode=FeatureMode.MODEL_BASED, window=3)
    y = np.full((3, 6), 1.0)
    u = np.full((3, 4), 2.0)
    r = np.full((3, 6), 3.0)
    features = spec.build(y, u, r)

    assert features.shape == (3, 16)
    np.testing.assert_array_equal(features[:, :6], 1.0)
    np.testing.assert_array_equal(features[:, 6:10], 2.0)
    np.testing.assert_array_equal(features[:, 10:], 3.0)


def test_residual_only_ignores_outputs_and_inputs():
    spec = FeatureSpec(mode='residual-only', window=2, residual_scale=10.0)
    r = np.arange(12.0).reshape(2, 6)
    np.testing.assert_array_equal(spec.build(np.zeros((2, 6)), np.zeros((2, 4)), r), 10.0 * r)


def test_residuals_are_required_when_used():
    spec = FeatureSpec(mode=FeatureMode.MODEL_BASED, window=2)
    with pytest.raises(ValueError):
        spec.build(np.zeros((2, 6)), np.zeros((2, 4)))


def test_window_length_is_checked():
    spec = FeatureSpec(window=5)
    with pytest.raises(ValueError):
        spec.build(np.zeros((4, 6)), np.zeros((4, 4)))


def test_build_keeps_leading_batch_axes():
    spec = FeatureSpec(window=5)
    assert spec.build(np.zeros((3, 5, 6)), np.zeros((3, 5, 4))).shape == (3, 5, 10)


def test_for_params_centers_hover_input(nominal):
    spec = FeatureSpec.for_params(FeatureMode.MODEL_FREE, 5, nominal, dt=0.01)
    u = np.tile(nominal.hover_wrench, (5, 1))
    features = spec.build(np.zeros((5, 6)), u)
    np.testing.assert_allclose(features[:, 6:], 0.0, atol=1e-12)
    assert spec.residual_scale == pytest.approx(1.0 / (nominal.g * 1e-4))


def test_compatibility_ignores_scaling(nominal):
    scaled = FeatureSpec.for_params(FeatureMode.MODEL_FREE, 5, nominal, dt=0.01)
    assert scaled.compatible_with(FeatureSpec(window=5))
    assert not scaled.compatible_with(FeatureSpec(window=6))
    assert not scaled.compatible_with(FeatureSpec(mode=FeatureMode.MODEL_BASED, window=5))


def test_dict_round_trip(nominal):
    spec = FeatureSpec.for_params(FeatureMode.MODEL_BASED, 7, nominal, dt=0.01)
    data = spec.as_dict()
    assert data['mode'] == 'model-based'
    assert FeatureSpec.from_dict(data) == spec


@pytest.mark.parametrize(
    'kwargs',
    [{'window': 0}, {'u_scale': (1.0, 1.0, 0.0, 1.0)}, {'u_offset': (0.0,)}, {'residual_scale': -1.0}],
)
def test_invalid_specs_are_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        FeatureSpec(**kwargs)
