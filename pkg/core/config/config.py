import logging
from pathlib import Path
from typing import Any

from core.config.settings import CONFIG_FILE_PATH, DEFAULT_LANGUAGE, DEFAULT_SCALE, PROFILES, SUPPORTED_LANGUAGES
from core.utils.exceptions import ConfigurationError
from core.utils.utils import load_config_from_ini

logger = logging.getLogger(__name__)


class Config:
    """
    Gere as configurações dinâmicas da aplicação, lidas a partir de um ficheiro .ini.
    Os valores resultam de três camadas (da menor para a maior prioridade):
    perfil de escala ('desk' ou 'paper'), ficheiro e sobreposições da linha de comandos.
    """

    def __init__(self, config_filepath: Path = CONFIG_FILE_PATH, overrides: dict[str, Any] | None = None):
        """
        Inicializa a configuração.

        Args:
            config_filepath (Path): O caminho para o ficheiro config.ini a ser lido.
                                    Por defeito, usa o caminho padrão da aplicação.
            overrides (dict[str, Any] | None): Valores 'secção.chave' vindos da linha de comandos.
        """
        self._config_path: Path = Path(config_filepath)
        self._overrides: dict[str, Any] = dict(overrides or {})
        self.values: dict[str, Any] = {}

        # Atributos preenchidos a partir do .ini
        self.SCALE: str = DEFAULT_SCALE
        self.SEED: int = 0
        self.LANGUAGE: str = DEFAULT_LANGUAGE
        self.SUPPORTED_LANGUAGES: list[str] = SUPPORTED_LANGUAGES
        self.OUTPUT_DIR: Path = Path('output')
        self.WORKERS: int = 1

        # Carrega as configurações na inicialização
        self.reload()

    @property
    def path(self) -> Path:
        return self._config_path

    def reload(self) -> None:
        """
        Lê (ou relê) o ficheiro de configuração do disco e atualiza
        os atributos da instância.
        """
        file_data: dict[str, Any] = {}
        try:
            if self._config_path.exists():
                logger.info(f'Loading/Reloading configuration from: {self._config_path}')
                file_data = load_config_from_ini(self._config_path)
            else:
                logger.warning(f"Config file not found at '{self._config_path}'. Using default/fallback values.")
        except OSError as e:
            logger.exception(f'Failed to load configuration file: {e}')
            # Em caso de falha de leitura, os valores padrão serão mantidos.

        scale = str(self._overrides.get('run.scale', file_data.get('run.scale', DEFAULT_SCALE))).strip().lower()
        if scale not in PROFILES:
            raise ConfigurationError(f"Unknown scale '{scale}'. Expected one of: {', '.join(PROFILES)}")

        unknown = sorted(set(file_data) - set(PROFILES[scale]) - {'run.scale'} - _PARAM_OVERRIDE_KEYS)
        if unknown:
            logger.warning(f'Ignoring unknown configuration keys: {", ".join(unknown)}')

        self.values = {**PROFILES[scale], **file_data, **self._overrides, 'run.scale': scale}

        self.SCALE = scale
        self.SEED = self.get_int('run.seed')
        self.LANGUAGE = self.get_str('run.language')
        self.OUTPUT_DIR = Path(self.get_str('run.output_dir'))
        self.WORKERS = max(1, self.get_int('run.workers'))

    def has(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str) -> str:
        if key not in self.values:
            raise ConfigurationError(f"Missing configuration key '{key}'")
        return str(self.values[key]).strip()

    def get_int(self, key: str) -> int:
        raw = self.get_str(key).replace('_', '')
        try:
            return int(float(raw)) if raw.lower().endswith(('e0', '.0')) else int(raw)
        except ValueError as e:
            raise ConfigurationError(f"Configuration key '{key}' expects an integer, got '{raw}'") from e

    def get_float(self, key: str) -> float:
        raw = self.get_str(key)
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigurationError(f"Configuration key '{key}' expects a number, got '{raw}'") from e

    def get_float_list(self, key: str) -> list[float]:
        raw = self.get_str(key)
        try:
            return [float(item) for item in raw.split(',') if item.strip()]
        except ValueError as e:
            raise ConfigurationError(f"Configuration key '{key}' expects a comma-separated list, got '{raw}'") from e


# Sobreposições individuais dos parâmetros físicos ([params] m = 0.03, ...)
_PARAM_OVERRIDE_KEYS = {f'params.{name}' for name in ('m', 'ixx', 'iyy', 'izz', 'ct', 'cd', 'd')}
