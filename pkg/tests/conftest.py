from pathlib import Path

import numpy as np
import pytest

from core.config.config import Config
from core.config.run_config import RunConfig, build_run_config
from core.config.settings import NOMINAL_PARAMS, PERTURBED_PARAMS
from core.physics.quadrotor import QuadParams
from core.utils.utils import create_config_file

# Execução reduzida: horizonte curto, janela pequena e redes minúsculas.
SMALL_VALUES = {
    'run.seed': 7,
    'sim.horizon': 30,
    'sim.onset': 15,
    'train.n1': 2,
    'train.fault_levels': '0.0,0.5,1.0',
    'train.window': 10,
    'train.n_buf': 1000,
    'train.n_bs': 32,
    'train.iter_max': 2,
    'train.n_max': 2,
    'train.n_min': 1,
    'train.hidden': 4,
    'train.arch': 'mlp',
    'eval.n_test_per_class': 3,
    'eval.min_overlap': 5,
}


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='run desk-scale reproductions')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def small_overrides(out_dir: Path, **extra) -> dict[str, str]:
    values = {key: str(value) for key, value in SMALL_VALUES.items()}
    values['run.output_dir'] = str(out_dir)
    values.update({key: str(value) for key, value in extra.items()})
    return values


def write_small_config(path: Path, out_dir: Path, **extra) -> Path:
    return create_config_file(path, small_overrides(out_dir, **extra))


@pytest.fixture
def nominal() -> QuadParams:
    return QuadParams.from_mapping(NOMINAL_PARAMS)


@pytest.fixture
def perturbed() -> QuadParams:
    return QuadParams.from_mapping(PERTURBED_PARAMS)


@pytest.fixture
def small_config(tmp_path) -> Config:
    return Config(config_filepath=tmp_path / 'absent.ini', overrides=small_overrides(tmp_path / 'out'))


@pytest.fixture
def small_run(small_config) -> RunConfig:
    return build_run_config(small_config)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)
