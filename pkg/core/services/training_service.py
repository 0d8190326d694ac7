import logging
from collections import deque
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

import numpy as np
import pandas as pd

from core.config.i18n import _
from core.config.run_config import RunConfig
from core.nn.features import FeatureSpec
from core.nn.networks import FdiNetwork, Gradients, SgdConfig, build_network, sgd_step
from core.services.data_service import DataService, RolloutSet, TrajectoryWindow, windows_from_rollouts
from core.utils.exceptions import PoisonedRunError
from core.utils.utils import make_rng

logger = logging.getLogger(__name__)

# Janelas por passagem forward/backward; os gradientes do lote são acumulados.
MICRO_BATCH = 256
LOSS_COLUMNS = ['epoch', 'mean_loss', 'buffer_size', 'dropped', 'learning_rate']


class ReplayBuffer:
    """Armazém FIFO limitado de janelas: ao exceder a capacidade saem as mais antigas."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(_('Buffer capacity must be >= 1'))
        self.capacity = capacity
        self._windows: deque[TrajectoryWindow] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._windows)

    def __getitem__(self, index: int) -> TrajectoryWindow:
        return self._windows[index]

    def append(self, window: TrajectoryWindow) -> None:
        self._windows.append(window)

    def extend(self, windows: Iterable[TrajectoryWindow]) -> None:
        self._windows.extend(windows)

    def sample_batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[list[TrajectoryWindow]]:
        """
        Partição aleatória do buffer em lotes disjuntos de 'batch_size' (o último pode ser menor).
        A ordem é fixada no início, pelo que o buffer não deve mudar durante a iteração.
        """
        if batch_size < 1:
            raise ValueError(_('Batch size must be >= 1'))
        snapshot = list(self._windows)
        order = rng.permutation(len(snapshot))
        for start in range(0, len(order), batch_size):
            yield [snapshot[i] for i in order[start : start + batch_size]]


def stack_windows(windows: list[TrajectoryWindow], spec: FeatureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Características (B, T, D) e rótulos (B, 4) de uma lista de janelas."""
    y = np.stack([w.y_seq for w in windows])
    u = np.stack([w.u_seq for w in windows])
    resid = np.stack([w.resid_seq for w in windows]) if spec.uses_residuals else None
    labels = np.stack([w.label for w in windows])
    return spec.build(y, u, resid), labels


@dataclass
class TrainingResult:
    network: FdiNetwork
    history: pd.DataFrame
    epochs: int
    converged: bool
    learning_rate: float


class TrainingService:
    """
    Ciclo de treino: em cada época gera dados (ou usa um conjunto fixo), alimenta o
    buffer e faz uma passagem de SGD pelos lotes amostrados sem reposição.
    """

    def __init__(self, run: RunConfig, data_service: DataService | None = None):
        self.run = run
        self.data_service = data_service or DataService(run)
        self.spec = FeatureSpec.for_params(run.train.mode, run.train.window, run.params, run.sim.dt)

    def build_network(self) -> FdiNetwork:
        train = self.run.train
        return build_network(train.arch, self.spec, train.hidden, make_rng(self.run.seed, 'init'))

    def batch_gradients(self, net: FdiNetwork, windows: list[TrajectoryWindow]) -> tuple[float, Gradients]:
        """Perda média e gradientes de um lote, acumulados por blocos de MICRO_BATCH janelas."""
        total_loss = 0.0
        grads = net.zero_gradients()
        for start in range(0, len(windows), MICRO_BATCH):
            X, labels = stack_windows(windows[start : start + MICRO_BATCH], self.spec)
            loss, chunk_grads = net.backward(X, labels, self.run.train.epsilon, normalizer=len(windows))
            total_loss += loss
            for name, g in chunk_grads.items():
                grads[name] += g
        return total_loss, grads

    def run_epoch(self, net: FdiNetwork, buffer: ReplayBuffer, epoch: int, learning_rate: float) -> float:
        """
        Uma passagem por todo o buffer.

        Returns:
            float: Perda média por janela na época (calculada antes de cada atualização).
        """
        cfg = SgdConfig(learning_rate=learning_rate, batch_size=self.run.train.n_bs, seed=self.run.seed)
        rng = make_rng(self.run.seed, 'batch-order', epoch)
        weighted = 0.0
        for index, batch in enumerate(buffer.sample_batches(cfg.batch_size, rng)):
            try:
                loss, grads = self.batch_gradients(net, batch)
            except PoisonedRunError as e:
                e.diagnostics.update({'epoch': epoch, 'batch': index, 'learning_rate': learning_rate})
                logger.error(_('Non-finite loss at epoch {epoch}, batch {batch}').format(epoch=epoch, batch=index))
                raise
            sgd_step(net, grads, cfg)
            weighted += loss * len(batch)
            logger.debug(_('Epoch {epoch} batch {batch}: loss {loss:.6f}').format(epoch=epoch, batch=index, loss=loss))
        return weighted / max(len(buffer), 1)

    def train(self, rollouts: RolloutSet | None = None) -> TrainingResult:
        """
        Treina uma rede nova.

        Args:
            rollouts (RolloutSet | None): Conjunto de dados pré-gerado. Se None, os dados
                são sintetizados em cada época.
        Returns:
            TrainingResult: Rede treinada e histórico de perdas (uma linha por época).
        Raises:
            PoisonedRunError: Perda ou gradiente não finito.
        """
        run = self.run
        train = run.train
        net = self.build_network()
        buffer = ReplayBuffer(train.n_buf)
        if rollouts is not None:
            buffer.extend(windows_from_rollouts(rollouts, train.window))
            logger.info(_('Training on a fixed dataset of {n} windows').format(n=len(buffer)))

        learning_rate = train.learning_rate
        best_loss = np.inf
        stale = 0
        rows = []
        converged = False

        for epoch in range(1, train.max_epochs + 1):
            dropped = 0
            if rollouts is None:
                data = self.data_service.synthesize_epoch_data(epoch)
                buffer.extend(data.windows)
                dropped = data.dropped

            mean_loss = self.run_epoch(net, buffer, epoch, learning_rate)
            rows.append({
                'epoch': epoch,
                'mean_loss': mean_loss,
                'buffer_size': len(buffer),
                'dropped': dropped,
                'learning_rate': learning_rate,
            })
            logger.info(
                _('Epoch {epoch}/{total}: mean loss {loss:.6f}, buffer {size}').format(
                    epoch=epoch, total=train.max_epochs, loss=mean_loss, size=len(buffer)
                )
            )

            if mean_loss < train.stop_loss and epoch >= train.n_min:
                converged = True
                logger.info(_('Stopping rule met at epoch {epoch}').format(epoch=epoch))
                break

            if mean_loss < best_loss:
                best_loss = mean_loss
                stale = 0
            else:
                stale += 1
                if stale >= train.plateau_patience:
                    learning_rate /= 2
                    stale = 0
                    logger.info(_('Loss plateau: learning rate halved to {lr:g}').format(lr=learning_rate))

        if not converged:
            logger.warning(_('Epoch limit reached without meeting the stopping rule'))

        history = pd.DataFrame(rows, columns=LOSS_COLUMNS)
        return TrainingResult(
            network=net, history=history, epochs=len(rows), converged=converged, learning_rate=learning_rate
        )
