"""
Reproduções à escala 'desk' (lentas: só correm com --run-slow) e verificações rápidas
de reprodutibilidade. Com --junitxml, as precisões observadas ficam registadas no relatório.
"""

import numpy as np
import pytest

from core.config.config import Config
from core.config.run_config import RunConfig, build_run_config
from core.nn.features import FeatureMode
from core.services.evaluation_service import EvaluatedNetwork, EvaluationService
from core.services.training_service import TrainingService

MIN_ACCURACY = 0.8
MAX_DROP = 0.10


def desk_run(tmp_path, **values) -> RunConfig:
    overrides = {'run.output_dir': str(tmp_path), 'train.hidden': '32', **{k: str(v) for k, v in values.items()}}
    return build_run_config(Config(tmp_path / 'absent.ini', overrides=overrides))


def _train(run: RunConfig, name: str) -> EvaluatedNetwork:
    return EvaluatedNetwork(name, TrainingService(run).train().network)


def _accuracy_by(summary: dict, column: str) -> dict[str, float]:
    return {row[column]: row['accuracy'] for row in summary['conditions']}


@pytest.fixture(scope='module')
def desk_dir(tmp_path_factory):
    return tmp_path_factory.mktemp('desk')


@pytest.fixture(scope='module')
def model_free_lstm(desk_dir):
    run = desk_run(desk_dir, **{'train.fault_levels': '0.0,1.0'})
    return run, _train(run, 'lstm-model-free')


def test_reduced_training_is_reproducible(small_run):
    run = small_run.with_train(n_max=3, iter_max=3)
    first = TrainingService(run).train()
    second = TrainingService(run).train()
    assert first.epochs == 3
    assert first.history.equals(second.history)
    for name, value in first.network.params.items():
        np.testing.assert_array_equal(value, second.network.params[name])


@pytest.mark.slow
def test_single_network_isolates_every_motor(model_free_lstm, record_property):
    run, entry = model_free_lstm
    summary = EvaluationService(run).run_experiment('rotation-cases', [entry]).summary
    accuracy = {row['fault_class']: row['accuracy'] for row in summary['classes']}
    record_property('accuracy_by_class', accuracy)
    assert set(accuracy) == {'motor-1', 'motor-2', 'motor-3', 'motor-4', 'none'}
    for fault_class, value in accuracy.items():
        assert value >= MIN_ACCURACY, fault_class


@pytest.mark.slow
def test_controller_shift_keeps_accuracy(model_free_lstm, record_property):
    run, entry = model_free_lstm
    summary = EvaluationService(run).run_experiment('controller-shift', [entry]).summary
    accuracy = _accuracy_by(summary, 'controller')
    record_property('accuracy_by_controller', accuracy)
    assert abs(accuracy['lqr'] - accuracy['cbf-qp']) <= MAX_DROP


@pytest.mark.slow
def test_lstm_outperforms_mlp_across_fault_levels(desk_dir, record_property):
    lstm_run = desk_run(desk_dir)
    mlp_run = desk_run(desk_dir, **{'train.arch': 'mlp'})
    nets = [_train(lstm_run, 'lstm'), _train(mlp_run, 'mlp')]
    summary = EvaluationService(lstm_run).run_experiment('fault-levels', nets).summary
    accuracy = _accuracy_by(summary, 'checkpoint')
    record_property('accuracy_by_architecture', accuracy)
    assert accuracy['lstm'] - accuracy['mlp'] >= MAX_DROP


@pytest.mark.slow
def test_residual_features_suffer_under_perturbed_plant(desk_dir, model_free_lstm, record_property):
    run, model_free = model_free_lstm
    based_run = desk_run(desk_dir, **{'train.fault_levels': '0.0,1.0', 'train.mode': str(FeatureMode.MODEL_BASED)})
    model_based = _train(based_run, 'lstm-model-based')

    summary = EvaluationService(run).run_experiment('param-perturbation', [model_free, model_based]).summary
    drops = {
        row['checkpoint']: row['accuracy_drop'] for row in summary['shift'] if row['param_set'] == 'perturbed'
    }
    record_property('accuracy_drop', drops)
    assert drops['lstm-model-free'] <= MAX_DROP
    assert drops['lstm-model-based'] > drops['lstm-model-free']
