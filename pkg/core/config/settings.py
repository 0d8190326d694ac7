import logging
import os
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR: Path = Path(__file__).resolve().parent.parent.parent

CONFIG_FILE_PATH: Path = BASE_DIR / 'config.ini'
OUTPUT_DIR: Path = BASE_DIR / 'output'

# Logging configuration
LOG_DIR: Path = BASE_DIR / 'logs'
LOG_ROOT_LEVEL: str = 'DEBUG'
LOG_CONSOLE_LEVEL: str = 'INFO'
LOG_INFO_FILE_ENABLED: bool = True
LOG_INFO_FILENAME: str = 'fdi_info.log'
LOG_INFO_FILE_LEVEL: str = 'INFO'
LOG_ERROR_FILE_ENABLED: bool = True
LOG_ERROR_FILENAME: str = 'fdi_error.log'
LOG_ERROR_FILE_LEVEL: str = 'ERROR'
LOG_MAX_BYTES: int = 10 * 1024 * 1024  # 10 MB
LOG_BACKUP_COUNT: int = 5

# Internationalization settings
LOCALE_DIR: str = os.path.join(BASE_DIR, 'locales')
DEFAULT_LANGUAGE: str = 'en'
SUPPORTED_LANGUAGES: list[str] = ['en', 'pt_PT']

# Constantes físicas
GRAVITY: float = 9.8

# Parâmetros do Crazyflie (nominal), coluna nominal da tabela e coluna perturbada.
NOMINAL_PARAMS: dict[str, float] = {
    'm': 0.0299,
    'ixx': 1.395e-5,
    'iyy': 1.395e-5,
    'izz': 2.173e-5,
    'ct': 3.1582e-10,
    'cd': 7.9379e-12,
    'd': 0.03973,
}

TABLE_NOMINAL_PARAMS: dict[str, float] = {
    'm': 0.02,
    'ixx': 1.395e-5,
    'iyy': 1.395e-5,
    'izz': 2.173e-5,
    'ct': 3.158e-10,
    'cd': 7.9379e-12,
    'd': 0.03973,
}

PERTURBED_PARAMS: dict[str, float] = {
    'm': 0.015,
    'ixx': 2.0e-5,
    'iyy': 1.0e-5,
    'izz': 3.0e-5,
    'ct': 2.5e-10,
    'cd': 9.0e-12,
    'd': 0.05,
}

PARAMETER_SETS: dict[str, dict[str, float]] = {
    'nominal': NOMINAL_PARAMS,
    'table-nominal': TABLE_NOMINAL_PARAMS,
    'perturbed': PERTURBED_PARAMS,
}

# Formatos de ficheiro
STORAGE_MAGIC: bytes = b'QFDI'
STORAGE_FORMAT_VERSION: int = 1

# Experiências disponíveis no comando 'eval'
EXPERIMENT_IDS: list[str] = [
    'rotation-cases',
    'fault-levels',
    'controller-shift',
    'param-perturbation',
]

# Valores base (escala 'desk'). As chaves seguem o formato 'secção.chave' do config.ini.
DESK_PROFILE: dict[str, Any] = {
    'run.seed': 1234,
    'run.language': DEFAULT_LANGUAGE,
    'run.output_dir': str(OUTPUT_DIR),
    'run.workers': 1,
    'sim.dt': 0.01,
    'sim.horizon': 200,
    'sim.onset': 100,
    'sim.divergence_bound': 1.0e3,
    'sim.convention': 'as-printed',
    'params.set': 'nominal',
    'control.controller': 'lqr',
    'control.q_weight': 1.0,
    'control.r_weight': 1.0e-3,
    # 'reference' usa Q = I, R = 0.1·I e ignora q_weight/r_weight.
    'control.weighting': 'input-scaled',
    'control.safe_radius': 1.0,
    'control.safe_center': '0,0,0',
    'control.cbf_alpha': 1.0,
    'control.max_thrust_ratio': 2.0,
    'control.init_radius': 0.5,
    'control.init_angle': 0.2,
    'control.init_rate': 0.2,
    'train.n1': 20,
    'train.n_per_epoch': 0,
    'train.fault_levels': '0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0',
    'train.fault_motor': 2,
    'train.window': 100,
    'train.n_buf': 50_000,
    'train.n_bs': 512,
    'train.iter_max': 200,
    'train.n_max': 200,
    'train.n_min': 10,
    'train.epsilon': 0.01,
    'train.stop_loss': 1.0e-3,
    'train.mode': 'model-free',
    'train.arch': 'lstm',
    'train.hidden': 128,
    'train.learning_rate': 1.0e-3,
    'train.plateau_patience': 10,
    'eval.theta_tol': 0.2,
    'eval.n_test_per_class': 50,
    'eval.min_overlap': 50,
    'eval.level_tolerance': 0.05,
}

# Escala completa ('paper'): só mudam as dimensões do treino e da avaliação.
PAPER_PROFILE: dict[str, Any] = {
    **DESK_PROFILE,
    'train.n1': 200,
    'train.n_buf': 1_500_000,
    'train.n_bs': 50_000,
    'train.iter_max': 500,
    'train.n_max': 500,
    'eval.n_test_per_class': 2000,
}

PROFILES: dict[str, dict[str, Any]] = {
    'desk': DESK_PROFILE,
    'paper': PAPER_PROFILE,
}

DEFAULT_SCALE: str = 'desk'
