import json
from dataclasses import replace

import numpy as np
import pytest

from core.physics.control import build_controller
from core.physics.quadrotor import Convention, FaultSchedule, FaultVector, SimConfig, simulate
from core.services.data_service import (
    DataService,
    generate_residuals,
    load_trajectory,
    residuals_for_batch,
    save_trajectory,
    slice_windows,
    trajectory_table,
)
from core.utils.exceptions import CorruptFileError, StorageError

# Os resíduos de uma trajetória saudável só diferem por arredondamento.
RESIDUAL_ATOL = 1e-9


@pytest.fixture
def service(small_run) -> DataService:
    return DataService(small_run)


@pytest.fixture
def epoch(service):
    return service.synthesize_epoch_data(0)


def test_training_faults_cover_every_level(service):
    faults = service.training_faults()
    assert faults.shape == (3, 4)
    np.testing.assert_array_equal(faults[:, 1], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(np.delete(faults, 1, axis=1), 1.0)


def test_epoch_is_balanced_across_levels(epoch, small_run):
    assert len(epoch.rollouts) == 6
    assert epoch.dropped == 0
    assert len(epoch.windows) == 6 * small_run.windows_per_rollout
    assert epoch.counts == {0.0: 32, 0.5: 32, 1.0: 32}


def test_levels_share_initial_conditions(epoch):
    starts = epoch.rollouts.initial_states
    np.testing.assert_array_equal(starts[0], starts[1])
    np.testing.assert_array_equal(starts[0], starts[2])
    assert not np.array_equal(starts[0], starts[3])
    np.testing.assert_array_equal(epoch.rollouts.labels[:3, 1], [0.0, 0.5, 1.0])


def test_windows_end_between_onset_and_horizon(epoch, small_run):
    first_rollout = epoch.windows[: small_run.windows_per_rollout]
    assert [w.onset_offset for w in first_rollout] == list(range(16))
    assert [w.end_step for w in first_rollout] == list(range(15, 31))

    window = first_rollout[0]
    assert window.y_seq.shape == (10, 6)
    assert window.u_seq.shape == (10, 4)
    np.testing.assert_array_equal(window.y_seq, epoch.rollouts.outputs[0, 6:16])
    np.testing.assert_array_equal(window.resid_seq, epoch.rollouts.residuals[0, 6:16])


def test_windows_are_views(epoch):
    window = epoch.windows[3]
    assert np.shares_memory(window.y_seq, epoch.rollouts.outputs)


def test_healthy_residuals_vanish(epoch):
    healthy = np.all(epoch.rollouts.labels == 1.0, axis=1)
    assert healthy.sum() == 2
    assert np.max(np.abs(epoch.rollouts.residuals[healthy])) <= RESIDUAL_ATOL


def test_faulty_residuals_appear_one_step_after_fault(epoch, small_run):
    onset = small_run.onset
    faulty = epoch.rollouts.labels[:, 1] < 1.0
    residuals = epoch.rollouts.residuals[faulty]

    np.testing.assert_array_equal(residuals[:, 0], 0.0)
    assert np.max(np.abs(residuals[:, : onset + 2])) <= RESIDUAL_ATOL
    assert np.all(np.max(np.abs(residuals[:, onset + 2 :]), axis=2) > 1e-7)


def test_epochs_are_deterministic(service):
    first = service.synthesize_epoch_data(1).rollouts
    second = service.synthesize_epoch_data(1).rollouts
    other = service.synthesize_epoch_data(2).rollouts
    np.testing.assert_array_equal(first.outputs, second.outputs)
    np.testing.assert_array_equal(first.residuals, second.residuals)
    assert not np.array_equal(first.initial_states, other.initial_states)


def test_worker_count_does_not_change_results(small_run):
    run = small_run.with_train(n1=10)
    serial = DataService(run).synthesize_epoch_data(0).rollouts
    parallel = DataService(replace(run, workers=2)).synthesize_epoch_data(0).rollouts
    np.testing.assert_array_equal(serial.outputs, parallel.outputs)
    np.testing.assert_array_equal(serial.inputs, parallel.inputs)
    np.testing.assert_array_equal(serial.labels, parallel.labels)


def test_dataset_round_trip(service, tmp_path):
    path, manifest = service.generate_dataset(tmp_path / 'dataset.qfdi')
    loaded = service.load_dataset(path)
    epoch = service.synthesize_epoch_data(0).rollouts

    assert manifest['rollouts'] == 6
    assert manifest['windows'] == 96
    assert manifest['windows_per_level'] == {'0.0': 32, '0.5': 32, '1.0': 32}
    assert manifest['dropped_divergence'] == 0
    assert json.loads((tmp_path / 'dataset.manifest.json').read_text(encoding='utf-8')) == manifest
    np.testing.assert_array_equal(loaded.outputs, epoch.outputs)
    np.testing.assert_array_equal(loaded.labels, epoch.labels)
    assert loaded.onset == 15


def test_dataset_shorter_than_window_is_rejected(service, small_run, tmp_path):
    path, _manifest = service.generate_dataset(tmp_path / 'dataset.qfdi')
    with pytest.raises(CorruptFileError):
        DataService(small_run.with_train(window=40)).load_dataset(path)


def test_slice_windows_without_residuals(rng):
    outputs, inputs = rng.standard_normal((21, 6)), rng.standard_normal((21, 4))
    windows = slice_windows(outputs, inputs, None, np.ones(4), onset=10, window=5)
    assert len(windows) == 11
    assert windows[-1].resid_seq is None
    np.testing.assert_array_equal(windows[-1].u_seq, inputs[16:21])


def test_non_finite_reference_invalidates_trajectory(nominal):
    cfg = SimConfig(dt=0.01, horizon=10)
    trajectory = simulate(np.zeros(12), build_controller('lqr', nominal, cfg.convention), FaultSchedule(), cfg, nominal)
    trajectory.states[4, 8] = np.inf
    generate_residuals(trajectory, nominal, cfg)
    assert trajectory.valid is False


def test_trajectory_export_round_trip(nominal, tmp_path):
    cfg = SimConfig(dt=0.01, horizon=25, convention=Convention.STANDARD_ZYX)
    x0 = np.zeros(12)
    x0[0:3] = (0.2, 0.1, -0.1)
    schedule = FaultSchedule(FaultVector.single(3, 0.25), onset_step=10)
    trajectory = simulate(x0, build_controller('lqr', nominal, cfg.convention), schedule, cfg, nominal)

    path = save_trajectory(trajectory, tmp_path / 'trajectory.qfdi', cfg, nominal)
    loaded, loaded_cfg, loaded_params = load_trajectory(path)

    np.testing.assert_array_equal(loaded.states, trajectory.states)
    np.testing.assert_array_equal(loaded.inputs, trajectory.inputs)
    np.testing.assert_array_equal(loaded.applied, trajectory.applied)
    assert loaded.schedule == schedule
    assert loaded.valid is True
    assert loaded_cfg == cfg
    assert loaded_params == nominal


def test_dataset_is_not_a_trajectory(service, tmp_path):
    path, _manifest = service.generate_dataset(tmp_path / 'dataset.qfdi')
    with pytest.raises(StorageError):
        load_trajectory(path)


def test_single_trajectory_residuals_match_batch(service, small_run):
    schedule = FaultSchedule(FaultVector.single(2, 0.5), onset_step=small_run.onset)
    trajectory = service.simulate_trajectory(schedule)
    residuals = generate_residuals(trajectory, small_run.params, small_run.sim)
    batch, finite = residuals_for_batch(trajectory.states, trajectory.inputs, small_run.params, small_run.sim)

    assert finite
    assert trajectory.valid is True
    np.testing.assert_allclose(residuals, batch, rtol=0, atol=1e-12)
    assert np.max(np.abs(residuals[: small_run.onset + 2])) <= RESIDUAL_ATOL
    assert np.max(np.abs(residuals[small_run.onset + 2 :])) > 1e-7


def test_trajectory_table_columns(service, small_run):
    trajectory = service.simulate_trajectory(FaultSchedule())
    table = trajectory_table(trajectory, generate_residuals(trajectory, small_run.params, small_run.sim))

    assert list(table.columns[:7]) == ['step', 'px', 'py', 'pz', 'phi', 'theta', 'psi']
    assert list(table.columns[7:11]) == ['U1', 'U2', 'U3', 'U4']
    assert len(table) == 31
    assert table.filter(like='resid_').abs().to_numpy().max() <= RESIDUAL_ATOL
    np.testing.assert_array_equal(table['pz'], trajectory.states[:, 2])
