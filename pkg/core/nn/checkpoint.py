import logging
from pathlib import Path
from typing import Any

from core.config.i18n import _
from core.handler.storage_handler import Container, StorageHandler
from core.nn.features import FeatureSpec
from core.nn.networks import ARCHITECTURES, FdiNetwork
from core.utils.exceptions import CorruptFileError, SpecMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'checkpoint'


def save_checkpoint(
    net: FdiNetwork, path: Path, seed: int, extra: dict[str, Any] | None = None, storage: StorageHandler | None = None
) -> Path:
    """Grava os pesos, o FeatureSpec, a arquitetura e a semente da rede."""
    metadata = {
        'arch': net.arch,
        'hidden': net.hidden,
        'seed': int(seed),
        'spec': net.spec.as_dict(),
        **(extra or {}),
    }
    container = Container(kind=CHECKPOINT_KIND, metadata=metadata, columns=dict(net.params))
    return (storage or StorageHandler()).write_container(Path(path), container)


def load_checkpoint(
    path: Path, expected_spec: FeatureSpec | None = None, storage: StorageHandler | None = None
) -> tuple[FdiNetwork, dict[str, Any]]:
    """
    Reconstrói a rede de um checkpoint.

    Args:
        path (Path): Ficheiro do checkpoint.
        expected_spec (FeatureSpec | None): Se indicado, o FeatureSpec gravado tem de ser compatível.
    Returns:
        tuple[FdiNetwork, dict]: A rede e os metadados gravados.
    Raises:
        SpecMismatchError: Características incompatíveis com as esperadas.
        CorruptFileError: Parâmetros em falta ou com forma errada.
    """
    container = (storage or StorageHandler()).read_container(Path(path), expected_kind=CHECKPOINT_KIND)
    metadata = container.metadata

    try:
        spec = FeatureSpec.from_dict(metadata['spec'])
        network_cls = ARCHITECTURES[metadata['arch']]
        hidden = int(metadata['hidden'])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFileError(_('Checkpoint {path} has incomplete metadata').format(path=path)) from e

    if expected_spec is not None and not spec.compatible_with(expected_spec):
        error_msg = _(
            'Checkpoint features ({got}, width {got_width}) do not match expected ({want}, width {want_width})'
        )
        raise SpecMismatchError(
            error_msg.format(
                got=str(spec.mode),
                got_width=spec.step_width,
                want=str(expected_spec.mode),
                want_width=expected_spec.step_width,
            )
        )

    shapes = network_cls.parameter_shapes(spec, hidden)
    params = {}
    for name, shape in shapes.items():
        values = container.columns.get(name)
        if values is None or values.shape != shape:
            raise CorruptFileError(_('Checkpoint parameter {name} is missing or malformed').format(name=name))
        params[name] = values

    logger.info(
        _('Loaded {arch} checkpoint {path} (features {mode})').format(
            arch=metadata['arch'], path=path, mode=str(spec.mode)
        )
    )
    return network_cls(spec, hidden, params), metadata
