import itertools

import numpy as np
import pytest

from core.physics.quadrotor import Convention, mix, mixing_matrix
from core.physics.symmetry import (
    CASE_ORDER,
    TRAINED_ROLE,
    _compose,
    _inverse_case,
    canonicalize_arrays,
    canonicalize_window,
    case_for_motor,
    equivariance_gap,
    equivariance_report,
    get_case,
    permute_input,
    rotate_output,
    rotate_state,
    rotation_cases,
    rotation_matrix,
)
from core.services.data_service import TrajectoryWindow


@pytest.mark.parametrize('n', CASE_ORDER)
def test_rotation_matrices_are_orthogonal(n):
    rotation = get_case(n).matrix
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rotation) == pytest.approx(1.0, abs=1e-12)


def test_quarter_turns_are_exact():
    np.testing.assert_array_equal(rotation_matrix(0.5 * np.pi), [[0, 1, 0], [-1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(rotation_matrix(np.pi), np.diag([-1.0, -1.0, 1.0]))


def test_composition_and_inverse():
    for first, second in itertools.product(rotation_cases(), repeat=2):
        composed = _compose(first, second)
        np.testing.assert_allclose(composed.matrix, second.matrix @ first.matrix, atol=1e-12)
    for case in rotation_cases():
        assert _compose(case, _inverse_case(case)) is get_case(TRAINED_ROLE)


def test_identity_case_is_trained_configuration():
    case = get_case(TRAINED_ROLE)
    assert case.n == TRAINED_ROLE
    assert case.motor_map == (1, 2, 3, 4)
    assert case.yaw_sign == 1


@pytest.mark.parametrize('n', CASE_ORDER)
def test_four_turns_return_to_start(n):
    case = get_case(n)
    np.testing.assert_array_equal(np.linalg.matrix_power(case.permutation, 4), np.eye(4))
    np.testing.assert_allclose(np.linalg.matrix_power(case.matrix, 4), np.eye(3), atol=1e-12)


def test_motor_one_case_maps_mixer_columns(nominal):
    case = case_for_motor(1)
    matrix = mixing_matrix(nominal)
    scale = np.abs(matrix).max(axis=1, keepdims=True)
    assert case.n == 3
    np.testing.assert_allclose(
        (matrix @ case.permutation) / scale, (case.wrench_transform @ matrix) / scale, rtol=0, atol=1e-12
    )


def test_every_motor_has_exactly_one_case():
    cases = {case_for_motor(motor).n for motor in range(1, 5)}
    assert cases == set(CASE_ORDER)
    for motor in range(1, 5):
        assert case_for_motor(motor).role_of(motor) == TRAINED_ROLE


def test_motor_maps_satisfy_mixer_consistency(nominal):
    matrix = mixing_matrix(nominal)
    for case in rotation_cases(nominal):
        assert sorted(case.motor_map) == [1, 2, 3, 4]
        lhs = matrix @ case.permutation
        rhs = case.wrench_transform @ matrix
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(matrix).max())


def test_quarter_turn_motor_maps(nominal):
    assert get_case(3).motor_map.index(TRAINED_ROLE) + 1 == 1
    assert get_case(4).motor_map.index(TRAINED_ROLE) + 1 == 4
    assert get_case(1).motor_map.index(TRAINED_ROLE) + 1 == 3
    assert get_case(4).yaw_sign == 1
    assert get_case(3).yaw_sign == -1


def test_wrench_permutation_matches_motor_permutation(nominal, rng):
    speeds = nominal.hover_speed_sq * rng.uniform(0.5, 1.5, size=(5, 4))
    scale = np.abs(mix(speeds, nominal)).max(axis=0)
    for case in rotation_cases(nominal):
        expected = mix(speeds @ case.permutation.T, nominal)
        permuted = permute_input(mix(speeds, nominal), case, nominal)
        np.testing.assert_allclose(permuted / scale, expected / scale, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(permute_input(speeds, case, nominal, kind='motor'), speeds @ case.permutation.T)


def test_rotation_preserves_block_norms(rng):
    x = rng.standard_normal((3, 12))
    for case in rotation_cases():
        rotated = rotate_state(x, case)
        for block in range(4):
            sl = slice(3 * block, 3 * block + 3)
            np.testing.assert_allclose(np.linalg.norm(rotated[:, sl], axis=1), np.linalg.norm(x[:, sl], axis=1))


def test_canonicalize_identity_returns_inputs(nominal, rng):
    y, u = rng.standard_normal((2, 5, 6)), rng.standard_normal((2, 5, 4))
    y_c, u_c, r_c = canonicalize_arrays(y, u, None, get_case(TRAINED_ROLE), nominal)
    assert y_c is y
    assert u_c is u
    assert r_c is None


def test_canonicalize_rotates_residuals(nominal, rng):
    y, u, r = rng.standard_normal((2, 5, 6)), rng.standard_normal((2, 5, 4)), rng.standard_normal((2, 5, 6))
    case = get_case(4)
    _y, _u, r_c = canonicalize_arrays(y, u, r, case, nominal)
    np.testing.assert_allclose(r_c, rotate_output(r, case))


@pytest.mark.parametrize('n', CASE_ORDER)
def test_canonicalize_window_is_invertible(n, nominal, rng):
    window = TrajectoryWindow(
        y_seq=rng.standard_normal((5, 6)),
        u_seq=mix(nominal.hover_speed_sq * rng.uniform(0.5, 1.5, size=(5, 4)), nominal),
        resid_seq=rng.standard_normal((5, 6)),
        label=np.ones(4),
        onset_offset=2,
        end_step=20,
    )
    case = get_case(n)
    rotated = canonicalize_window(window, case, nominal)
    restored = canonicalize_window(rotated, _inverse_case(case), nominal)

    assert rotated.end_step == window.end_step
    assert rotated.label is window.label
    np.testing.assert_allclose(rotated.y_seq, rotate_output(window.y_seq, case))
    np.testing.assert_allclose(restored.y_seq, window.y_seq, rtol=0, atol=1e-12)
    np.testing.assert_allclose(restored.resid_seq, window.resid_seq, rtol=0, atol=1e-12)
    scale = np.abs(window.u_seq).max(axis=0)
    np.testing.assert_allclose(restored.u_seq / scale, window.u_seq / scale, rtol=0, atol=1e-10)


@pytest.mark.parametrize('convention', list(Convention))
def test_identity_case_has_no_gap(nominal, convention):
    assert equivariance_gap(get_case(TRAINED_ROLE), convention, nominal, steps=20) == 0.0


def test_half_turn_is_exact_under_zyx(nominal):
    assert equivariance_gap(get_case(4), Convention.STANDARD_ZYX, nominal, steps=50) <= 1e-6


def test_equivariance_report_lists_every_case(nominal):
    report = equivariance_report(nominal, steps=10)
    assert len(report) == 2 * len(CASE_ORDER)
    assert set(report['convention']) == {str(c) for c in Convention}
    assert sorted(report['motor_as_role_2'].unique().tolist()) == [1, 2, 3, 4]
    assert (report['max_gap'] >= 0).all()
