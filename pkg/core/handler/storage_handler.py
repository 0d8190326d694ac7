import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from core.config.i18n import _
from core.config.settings import STORAGE_FORMAT_VERSION, STORAGE_MAGIC
from core.utils.exceptions import CorruptFileError, StorageError, VersionMismatchError

logger = logging.getLogger(__name__)

_LENGTH = struct.Struct('<I')
_DTYPE = np.dtype('<f8')
CSV_FLOAT_FORMAT = '%.10g'


@dataclass
class Container:
    """Conteúdo de um ficheiro binário: tipo, metadados JSON e colunas float64."""

    kind: str
    metadata: dict[str, Any] = field(default_factory=dict)
    columns: dict[str, np.ndarray] = field(default_factory=dict)


class StorageHandler:
    """
    Responsável por toda a leitura e escrita em disco: contentores binários
    (trajetórias, conjuntos de dados, checkpoints), relatórios CSV e resumos JSON.
    """

    @staticmethod
    def _prepare_parent(path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)

    def write_container(self, path: Path, container: Container) -> Path:
        """
        Grava: magia, comprimento do cabeçalho (uint32 LE), cabeçalho JSON e colunas '<f8'.
        Args:
            path (Path): Ficheiro de destino.
            container (Container): Conteúdo a gravar.
        Returns:
            Path: O caminho gravado.
        """
        path = Path(path)
        table = []
        payloads = []
        offset = 0
        for name, values in container.columns.items():
            data = np.ascontiguousarray(values, dtype=_DTYPE)
            table.append({'name': name, 'shape': list(data.shape), 'offset': offset})
            payloads.append(data.tobytes())
            offset += data.nbytes

        header = {
            'format_version': STORAGE_FORMAT_VERSION,
            'kind': container.kind,
            'metadata': container.metadata,
            'columns': table,
            'payload_bytes': offset,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')

        try:
            self._prepare_parent(path)
            with open(path, 'wb') as f:
                f.write(STORAGE_MAGIC)
                f.write(_LENGTH.pack(len(header_bytes)))
                f.write(header_bytes)
                for payload in payloads:
                    f.write(payload)
        except OSError as e:
            error_msg = _('Failed to write file {path}: {error}').format(path=path, error=e)
            logger.error(error_msg)
            raise StorageError(error_msg) from e

        logger.info(
            _('Wrote {kind} file {path} ({n} columns, {size} bytes)').format(
                kind=container.kind, path=path, n=len(table), size=offset
            )
        )
        return path

    def read_container(self, path: Path, expected_kind: str | None = None) -> Container:
        """
        Lê e valida um contentor (magia, versão, comprimentos declarados).

        Raises:
            CorruptFileError: Ficheiro truncado ou ilegível.
            VersionMismatchError: Versão do formato diferente.
            StorageError: Tipo inesperado ou ficheiro inexistente.
        """
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            error_msg = _('Failed to read file {path}: {error}').format(path=path, error=e)
            logger.error(error_msg)
            raise StorageError(error_msg) from e

        prefix = len(STORAGE_MAGIC) + _LENGTH.size
        if len(raw) < prefix or raw[: len(STORAGE_MAGIC)] != STORAGE_MAGIC:
            raise CorruptFileError(_('File {path} is not a valid data file').format(path=path))

        (header_length,) = _LENGTH.unpack_from(raw, len(STORAGE_MAGIC))
        if len(raw) < prefix + header_length:
            raise CorruptFileError(_('File {path} is truncated (header)').format(path=path))
        try:
            header = json.loads(raw[prefix : prefix + header_length].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptFileError(_('File {path} has an unreadable header').format(path=path)) from e

        version = header.get('format_version')
        if version != STORAGE_FORMAT_VERSION:
            raise VersionMismatchError(
                _('File {path} has format version {version}, expected {expected}').format(
                    path=path, version=version, expected=STORAGE_FORMAT_VERSION
                )
            )
        if expected_kind is not None and header.get('kind') != expected_kind:
            raise StorageError(
                _("File {path} holds '{kind}', expected '{expected}'").format(
                    path=path, kind=header.get('kind'), expected=expected_kind
                )
            )

        payload = memoryview(raw)[prefix + header_length :]
        if len(payload) != header.get('payload_bytes'):
            raise CorruptFileError(
                _('File {path} is truncated: {got} of {expected} payload bytes').format(
                    path=path, got=len(payload), expected=header.get('payload_bytes')
                )
            )

        columns = {}
        for column in header['columns']:
            count = int(np.prod(column['shape'], dtype=np.int64))
            end = column['offset'] + count * _DTYPE.itemsize
            if end > len(payload):
                raise CorruptFileError(_('Column {name} exceeds the payload').format(name=column['name']))
            if count == 0:
                columns[column['name']] = np.zeros(column['shape'])
                continue
            values = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=column['offset'])
            columns[column['name']] = values.reshape(column['shape']).astype(np.float64)

        logger.debug(_('Read {kind} file {path}').format(kind=header['kind'], path=path))
        return Container(kind=header['kind'], metadata=header.get('metadata', {}), columns=columns)

    def write_csv(self, path: Path, df: pd.DataFrame) -> Path:
        path = Path(path)
        try:
            self._prepare_parent(path)
            df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        except OSError as e:
            raise StorageError(_('Failed to write CSV {path}: {error}').format(path=path, error=e)) from e
        logger.info(_('Wrote CSV {path} ({rows} rows)').format(path=path, rows=len(df)))
        return path

    @staticmethod
    def read_csv(path: Path) -> pd.DataFrame:
        try:
            return pd.read_csv(path)
        except FileNotFoundError as e:
            raise StorageError(_('CSV file not found: {path}').format(path=path)) from e
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise CorruptFileError(_('Unreadable CSV file {path}: {error}').format(path=path, error=e)) from e

    def write_json(self, path: Path, data: dict[str, Any]) -> Path:
        path = Path(path)
        try:
            self._prepare_parent(path)
            path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + '\n', encoding='utf-8')
        except OSError as e:
            raise StorageError(_('Failed to write JSON {path}: {error}').format(path=path, error=e)) from e
        return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')
