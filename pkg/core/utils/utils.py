import hashlib
import logging
from pathlib import Path
from typing import Any

import numpy as np

from core.utils.exceptions import StorageError

logger = logging.getLogger(__name__)

CONFIG_HEADER = (
    '# Quadrotor FDI laboratory configuration',
    '# Generated by init-config. Keys are grouped by section; override any of them with --set section.key=value.',
    '# run.scale selects the hyper-parameter profile (desk or paper).',
)


def _unquote(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in {'"', "'"}:
        return value[1:-1]
    return value


def load_config_from_ini(env_path: Path) -> dict[str, str]:
    """
    Lê um ficheiro .ini por secções e devolve as chaves no formato 'secção.chave'.

    Linhas fora de qualquer secção mantêm a chave simples. Comentários começam por '#' ou ';'.
    Args:
        env_path (Path): O caminho para o ficheiro .ini.
    Returns:
        dict[str, str]: Chaves em minúsculas e valores em texto, sem aspas.
    """
    if not env_path.is_file():
        raise FileNotFoundError(f'Configuration file not found: {env_path}')

    values: dict[str, str] = {}
    section = ''
    for number, raw in enumerate(env_path.read_text(encoding='utf-8').splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in '#;':
            continue
        if line[0] == '[' and line[-1] == ']':
            section = line[1:-1].strip().lower()
            continue

        key, sep, value = line.partition('=')
        if not sep:
            logger.warning(f'Ignoring line {number} of {env_path}: expected key = value')
            continue
        key = key.strip().lower()
        values[f'{section}.{key}' if section else key] = _unquote(value.strip())

    return values


def create_config_file(config_path: Path, values: dict[str, Any]) -> Path:
    """
    Escreve o config.ini agrupando as chaves 'secção.chave' em secções.

    Raises:
        StorageError: se o ficheiro não puder ser escrito.
    """
    sections: dict[str, list[str]] = {}
    for full_key, value in values.items():
        section, _sep, key = full_key.partition('.')
        sections.setdefault(section, []).append(f'{key} = {value}')

    lines = list(CONFIG_HEADER)
    for section, entries in sections.items():
        lines.extend(['', f'[{section}]', *entries])

    logger.info(f'Creating configuration file at: {config_path}')
    try:
        config_path.parent.mkdir(parents=True, exist_ok=True)
        config_path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    except OSError as e:
        logger.exception(f'Failed to write configuration file {config_path}')
        raise StorageError(f'Failed to write configuration file {config_path}: {e}') from e

    return config_path


def stable_hash(name: str) -> int:
    """Hash de 32 bits estável entre processos (ao contrário de hash())."""
    return int.from_bytes(hashlib.sha256(name.encode('utf-8')).digest()[:4], 'little')


def make_rng(seed: int, *names: str | int) -> np.random.Generator:
    """
    Cria um gerador independente para um sub-fluxo nomeado da semente principal.

    Exemplo: make_rng(seed, 'data', 3) é o fluxo de condições iniciais da época 3.
    Args:
        seed (int): Semente principal da execução.
        names: Nomes/índices que identificam o sub-fluxo.
    Returns:
        np.random.Generator: Gerador determinístico.
    """
    spawn_key = tuple(stable_hash(str(name)) for name in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def file_digest(path: Path, length: int = 12) -> str:
    """Retorna os primeiros caracteres do SHA-256 do conteúdo de um ficheiro."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()[:length]
