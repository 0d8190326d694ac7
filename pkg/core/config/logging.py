import logging
import logging.config
from pathlib import Path
from typing import Any

from core.config.i18n import _

from .settings import (
    LOG_BACKUP_COUNT,
    LOG_CONSOLE_LEVEL,
    LOG_DIR,
    LOG_ERROR_FILE_ENABLED,
    LOG_ERROR_FILE_LEVEL,
    LOG_ERROR_FILENAME,
    LOG_INFO_FILE_ENABLED,
    LOG_INFO_FILE_LEVEL,
    LOG_INFO_FILENAME,
    LOG_MAX_BYTES,
    LOG_ROOT_LEVEL,
)


def _rotating_file(level: str, path: Path) -> dict[str, Any]:
    return {
        'level': level,
        'class': 'logging.handlers.RotatingFileHandler',
        'filename': str(path),
        'maxBytes': LOG_MAX_BYTES,
        'backupCount': LOG_BACKUP_COUNT,
        'mode': 'a',
        'encoding': 'utf-8',
        'formatter': 'standard',
    }


def setup_logging(log_dir: Path | None = LOG_DIR, console_level: str = LOG_CONSOLE_LEVEL) -> None:
    """
    Configura o logger raiz: consola e, se ativos, ficheiros rotativos de info e de erros.

    Args:
        log_dir (Path | None): Pasta dos ficheiros de log. None desativa os ficheiros.
        console_level (str): Nível mínimo das mensagens escritas na consola.
    """
    logging_root_level = str(LOG_ROOT_LEVEL).upper()

    handlers_config: dict[str, dict[str, Any]] = {
        'console': {
            'level': str(console_level).upper(),
            'class': 'logging.StreamHandler',
            'formatter': 'standard',
        }
    }

    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)

        if LOG_INFO_FILE_ENABLED and LOG_INFO_FILENAME:
            handlers_config['info_file'] = _rotating_file(
                str(LOG_INFO_FILE_LEVEL).upper(), log_dir / LOG_INFO_FILENAME
            )

        if LOG_ERROR_FILE_ENABLED and LOG_ERROR_FILENAME:
            handlers_config['error_file'] = _rotating_file(
                str(LOG_ERROR_FILE_LEVEL).upper(), log_dir / LOG_ERROR_FILENAME
            )

    logging_config = {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {'standard': {'format': '%(asctime)s - %(levelname)s - %(name)s - %(process)d - %(message)s'}},
        'handlers': handlers_config,
        'root': {'level': logging_root_level, 'handlers': list(handlers_config)},
    }

    logging.config.dictConfig(logging_config)

    logging.getLogger(__name__).debug(
        _('Setting up Logging. Root level: {logging_root_level}. Handlers: {handlers}').format(
            logging_root_level=logging_root_level, handlers=', '.join(handlers_config)
        )
    )
