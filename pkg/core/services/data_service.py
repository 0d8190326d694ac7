import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from core.config.i18n import _
from core.config.run_config import RunConfig
from core.handler.storage_handler import Container, StorageHandler
from core.physics.control import build_controller, sample_initial_states
from core.physics.quadrotor import (
    N_MOTORS,
    OUTPUT_DIM,
    OUTPUT_LABELS,
    WRENCH_LABELS,
    Convention,
    FaultSchedule,
    FaultVector,
    QuadParams,
    RolloutBatch,
    SimConfig,
    Trajectory,
    _raw_rk4,
    output_of,
    simulate,
    simulate_batch,
    step_rk4,
)
from core.utils.exceptions import CorruptFileError, DivergenceError
from core.utils.utils import make_rng

logger = logging.getLogger(__name__)

DATASET_KIND = 'dataset'
TRAJECTORY_KIND = 'trajectory'
# Condições iniciais simuladas por bloco; fixo para que o número de processos não altere os resultados.
ROLLOUT_CHUNK = 8


@dataclass(frozen=True)
class TrajectoryWindow:
    """
    Janela de T amostras terminada no passo 'end_step'. As sequências são vistas
    sobre os arrays da simulação. 'onset_offset' é o número de passos com falha na janela.
    """

    y_seq: np.ndarray
    u_seq: np.ndarray
    resid_seq: np.ndarray | None
    label: np.ndarray
    onset_offset: int
    end_step: int


@dataclass
class RolloutSet:
    """Trajetórias válidas (não divergentes) de um lote, com os respetivos resíduos."""

    outputs: np.ndarray  # (R, H+1, 6)
    inputs: np.ndarray  # (R, H+1, 4)
    residuals: np.ndarray  # (R, H+1, 6)
    labels: np.ndarray  # (R, 4)
    initial_states: np.ndarray  # (R, 12)
    onset: int
    dropped: int = 0
    dropped_levels: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return self.outputs.shape[0]


@dataclass
class EpochData:
    windows: list[TrajectoryWindow]
    rollouts: RolloutSet
    dropped: int
    counts: dict[float, int]


def residuals_for_batch(
    states: np.ndarray, inputs: np.ndarray, nominal: QuadParams, cfg: SimConfig
) -> tuple[np.ndarray, np.ndarray]:
    """
    Resíduos com ressincronização a cada amostra: ȳ(k) resulta de integrar o modelo
    nominal sem falha um período a partir de x(k−1) com o comando registado u(k−1).
    ỹ(0) = 0.

    Returns:
        tuple[np.ndarray, np.ndarray]: Resíduos (..., n, 6) e máscara de trajetórias finitas.
    """
    with np.errstate(all='ignore'):
        reference = _raw_rk4(states[..., :-1, :], inputs[..., :-1, :], nominal, cfg.dt, cfg.convention)
    residuals = np.zeros(states.shape[:-1] + (OUTPUT_DIM,))
    residuals[..., 1:, :] = output_of(states[..., 1:, :]) - output_of(reference)
    finite = np.all(np.isfinite(residuals), axis=(-2, -1))
    return residuals, finite


def generate_residuals(traj: Trajectory, nominal: QuadParams, cfg: SimConfig) -> np.ndarray:
    """
    Resíduos de uma trajetória, amostra a amostra. Amostras cujo modelo de referência
    diverge ficam a NaN e a trajetória é marcada como inválida.
    """
    residuals = np.zeros((traj.n_samples, OUTPUT_DIM))
    for k in range(1, traj.n_samples):
        try:
            reference = step_rk4(traj.states[k - 1], traj.inputs[k - 1], nominal, cfg.dt, cfg.convention)
        except DivergenceError:
            residuals[k] = np.nan
            continue
        residuals[k] = output_of(traj.states[k]) - output_of(reference)

    bad = ~np.all(np.isfinite(residuals), axis=1)
    if bad.any():
        traj.valid = False
        logger.warning(
            _('Reference model diverged at {n} samples while computing residuals').format(n=int(bad.sum()))
        )
    return residuals


def trajectory_table(traj: Trajectory, residuals: np.ndarray) -> pd.DataFrame:
    """Tabela por amostra: saídas, comandos do controlador e resíduos."""
    columns: dict[str, np.ndarray] = {'step': np.arange(traj.n_samples)}
    columns.update(zip(OUTPUT_LABELS, traj.outputs.T, strict=True))
    columns.update(zip(WRENCH_LABELS, traj.inputs.T, strict=True))
    columns.update((f'resid_{label}', values) for label, values in zip(OUTPUT_LABELS, residuals.T, strict=True))
    return pd.DataFrame(columns)


def save_trajectory(
    traj: Trajectory, path: Path, cfg: SimConfig, params: QuadParams, storage: StorageHandler | None = None
) -> Path:
    """Exporta uma trajetória (estados, saídas, comandos e comandos aplicados) com a configuração e a falha."""
    metadata = {
        'params': params.as_dict(),
        'sim': {
            'dt': cfg.dt,
            'horizon': cfg.horizon,
            'divergence_bound': cfg.divergence_bound,
            'convention': str(cfg.convention),
        },
        'fault': list(traj.schedule.fault.theta),
        'onset_step': traj.schedule.onset_step,
        'valid': traj.valid,
        'diverged_at': traj.diverged_at,
    }
    columns = {'states': traj.states, 'outputs': traj.outputs, 'inputs': traj.inputs, 'applied': traj.applied}
    return (storage or StorageHandler()).write_container(Path(path), Container(TRAJECTORY_KIND, metadata, columns))


def load_trajectory(path: Path, storage: StorageHandler | None = None) -> tuple[Trajectory, SimConfig, QuadParams]:
    """
    Lê uma trajetória exportada por save_trajectory.

    Raises:
        CorruptFileError: Metadados ou colunas em falta.
    """
    container = (storage or StorageHandler()).read_container(Path(path), expected_kind=TRAJECTORY_KIND)
    metadata, columns = container.metadata, container.columns
    try:
        sim = metadata['sim']
        cfg = SimConfig(
            dt=sim['dt'],
            horizon=sim['horizon'],
            divergence_bound=sim['divergence_bound'],
            convention=Convention(sim['convention']),
        )
        trajectory = Trajectory(
            states=columns['states'],
            outputs=columns['outputs'],
            inputs=columns['inputs'],
            applied=columns['applied'],
            schedule=FaultSchedule(FaultVector(tuple(metadata['fault'])), int(metadata['onset_step'])),
            valid=bool(metadata['valid']),
            diverged_at=metadata['diverged_at'],
        )
        params = QuadParams.from_mapping(metadata['params'])
    except (KeyError, ValueError) as e:
        raise CorruptFileError(_('Trajectory file {path} is incomplete: {error}').format(path=path, error=e)) from e
    return trajectory, cfg, params


def slice_windows(
    outputs: np.ndarray,
    inputs: np.ndarray,
    residuals: np.ndarray | None,
    label: np.ndarray,
    onset: int,
    window: int,
) -> list[TrajectoryWindow]:
    """
    Janelas deslizantes de uma trajetória: para k = onset..horizon, amostras k−T+1..k,
    com onset_offset = k − onset.
    """
    horizon = outputs.shape[0] - 1
    y_views = sliding_window_view(outputs, window, axis=0)
    u_views = sliding_window_view(inputs, window, axis=0)
    r_views = None if residuals is None else sliding_window_view(residuals, window, axis=0)

    windows = []
    for k in range(onset, horizon + 1):
        start = k - window + 1
        windows.append(
            TrajectoryWindow(
                y_seq=y_views[start].T,
                u_seq=u_views[start].T,
                resid_seq=None if r_views is None else r_views[start].T,
                label=label,
                onset_offset=k - onset,
                end_step=k,
            )
        )
    return windows


def windows_from_rollouts(rollouts: RolloutSet, window: int) -> list[TrajectoryWindow]:
    windows: list[TrajectoryWindow] = []
    for index in range(len(rollouts)):
        windows.extend(
            slice_windows(
                rollouts.outputs[index],
                rollouts.inputs[index],
                rollouts.residuals[index],
                rollouts.labels[index],
                rollouts.onset,
                window,
            )
        )
    return windows


def _simulate_chunk(task: tuple[Any, ...]) -> tuple[RolloutBatch, np.ndarray, np.ndarray]:
    """Simula um bloco (executado no processo principal ou num processo de trabalho)."""
    x0, faults, onset, sim, params, nominal, controller_args = task
    controller = build_controller(*controller_args)
    batch = simulate_batch(x0, controller, faults, onset, sim, params)
    residuals, finite = residuals_for_batch(batch.states, batch.inputs, nominal, sim)
    return batch, residuals, finite


class DataService:
    """
    Gera os dados de treino e de teste: condições iniciais, trajetórias com
    falhas injetadas, resíduos e janelas deslizantes.
    """

    def __init__(self, run: RunConfig, storage: StorageHandler | None = None):
        self.run = run
        self.storage = storage or StorageHandler()

    def simulate_rollouts(
        self,
        initial_states: np.ndarray,
        faults: np.ndarray,
        params: QuadParams | None = None,
        controller_kind: str | None = None,
    ) -> RolloutSet:
        """
        Simula todas as combinações (condição inicial, Θ) pela ordem das linhas de 'faults'
        para cada condição inicial. Trajetórias divergentes são descartadas e contadas.

        Args:
            initial_states (np.ndarray): Condições iniciais, forma (N, 12).
            faults (np.ndarray): Vetores Θ a aplicar a cada condição inicial, forma (d, 4).
            params (QuadParams | None): Planta simulada (por defeito, a da configuração).
            controller_kind (str | None): 'lqr' ou 'cbf-qp' (por defeito, o da configuração).
        """
        run = self.run
        plant = params or run.params
        controller_args = self._controller_args(controller_kind, plant)
        n_levels = faults.shape[0]

        tasks = []
        for start in range(0, initial_states.shape[0], ROLLOUT_CHUNK):
            chunk = initial_states[start : start + ROLLOUT_CHUNK]
            x0 = np.repeat(chunk, n_levels, axis=0)
            chunk_faults = np.tile(faults, (chunk.shape[0], 1))
            tasks.append((x0, chunk_faults, run.onset, run.sim, plant, run.params, controller_args))

        if run.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=run.workers) as executor:
                results = list(executor.map(_simulate_chunk, tasks))
        else:
            results = [_simulate_chunk(task) for task in tasks]

        outputs, inputs, residuals, labels, starts = [], [], [], [], []
        dropped_levels: list[float] = []
        for (batch, resid, finite), task in zip(results, tasks, strict=True):
            keep = batch.valid & finite
            for row in np.flatnonzero(~keep):
                faulty = batch.faults[row][batch.faults[row] < 1.0]
                dropped_levels.append(float(faulty[0]) if faulty.size else 1.0)
            outputs.append(batch.outputs[keep])
            inputs.append(batch.inputs[keep])
            residuals.append(resid[keep])
            labels.append(batch.faults[keep])
            starts.append(task[0][keep])

        rollouts = RolloutSet(
            outputs=np.concatenate(outputs),
            inputs=np.concatenate(inputs),
            residuals=np.concatenate(residuals),
            labels=np.concatenate(labels),
            initial_states=np.concatenate(starts),
            onset=run.onset,
            dropped=len(dropped_levels),
            dropped_levels=dropped_levels,
        )
        if rollouts.dropped:
            logger.warning(
                _('{dropped} of {total} rollouts diverged and were dropped').format(
                    dropped=rollouts.dropped, total=initial_states.shape[0] * n_levels
                )
            )
        return rollouts

    def _controller_args(self, controller_kind: str | None, plant: QuadParams) -> tuple[Any, ...]:
        # O controlador é sempre projetado para a planta simulada.
        control = self.run.control
        return (
            controller_kind or control.controller,
            plant,
            self.run.sim.convention,
            control.q_weight,
            control.r_weight,
            control.safety,
            control.weighting,
        )

    def simulate_trajectory(self, schedule: FaultSchedule, params: QuadParams | None = None) -> Trajectory:
        """Uma trajetória com o controlador configurado, a partir de uma condição inicial da semente 'trajectory'."""
        plant = params or self.run.params
        x0 = self.sample_initial_states(make_rng(self.run.seed, 'trajectory'), 1)[0]
        controller = build_controller(*self._controller_args(None, plant))
        return simulate(x0, controller, schedule, self.run.sim, plant)

    def sample_initial_states(self, rng: np.random.Generator, n: int) -> np.ndarray:
        control = self.run.control
        return sample_initial_states(
            rng, n, control.init_radius, control.init_angle, control.init_rate, control.safety.center
        )

    def training_faults(self) -> np.ndarray:
        """Um Θ por nível de falha do motor de treino (d linhas)."""
        train = self.run.train
        faults = np.ones((train.d, N_MOTORS))
        faults[:, train.fault_motor - 1] = train.fault_levels
        return faults

    def synthesize_epoch_data(self, epoch: int) -> EpochData:
        """
        Dados de uma época: N1 condições iniciais, uma trajetória por nível de falha
        (as mesmas condições para todos os níveis) e as janelas k = onset..horizon.
        """
        run = self.run
        n1 = run.train.initial_conditions_per_epoch(run.windows_per_rollout)
        initial_states = self.sample_initial_states(make_rng(run.seed, 'data', epoch), n1)
        rollouts = self.simulate_rollouts(initial_states, self.training_faults())
        windows = windows_from_rollouts(rollouts, run.train.window)
        counts = self.count_windows(rollouts)
        logger.debug(
            _('Epoch {epoch} data: {n} windows from {r} rollouts').format(epoch=epoch, n=len(windows), r=len(rollouts))
        )
        return EpochData(windows=windows, rollouts=rollouts, dropped=rollouts.dropped, counts=counts)

    def count_windows(self, rollouts: RolloutSet) -> dict[float, int]:
        """Número de janelas por nível de falha do motor de treino."""
        motor = self.run.train.fault_motor - 1
        per_rollout = self.run.windows_per_rollout
        counts = {float(level): 0 for level in self.run.train.fault_levels}
        for label in rollouts.labels:
            counts[float(label[motor])] = counts.get(float(label[motor]), 0) + per_rollout
        return counts

    def generate_dataset(self, out_path: Path) -> tuple[Path, dict[str, Any]]:
        """
        Gera um conjunto de dados de uma época (semente 'data'/0) e grava-o com o manifesto.

        Returns:
            tuple[Path, dict]: Caminho do conjunto de dados e manifesto.
        """
        run = self.run
        data = self.synthesize_epoch_data(0)
        rollouts = data.rollouts
        manifest = {
            'seed': run.seed,
            'scale': run.scale,
            'rollouts': len(rollouts),
            'windows': len(data.windows),
            'dropped_divergence': data.dropped,
            'dropped_levels': rollouts.dropped_levels,
            'windows_per_level': {f'{level:.1f}': count for level, count in data.counts.items()},
            'fault_motor': run.train.fault_motor,
            'onset': run.onset,
            'horizon': run.sim.horizon,
            'window': run.train.window,
            'controller': run.control.controller,
            'convention': str(run.sim.convention),
            'params': run.params.as_dict(),
        }
        container = Container(
            kind=DATASET_KIND,
            metadata=manifest,
            columns={
                'outputs': rollouts.outputs,
                'inputs': rollouts.inputs,
                'residuals': rollouts.residuals,
                'labels': rollouts.labels,
                'initial_states': rollouts.initial_states,
            },
        )
        out_path = Path(out_path)
        self.storage.write_container(out_path, container)
        self.storage.write_json(out_path.with_suffix('.manifest.json'), manifest)
        logger.info(
            _('Dataset written: {rollouts} rollouts, {windows} windows, {dropped} dropped').format(
                rollouts=len(rollouts), windows=len(data.windows), dropped=data.dropped
            )
        )
        return out_path, manifest

    def load_dataset(self, path: Path) -> RolloutSet:
        container = self.storage.read_container(Path(path), expected_kind=DATASET_KIND)
        try:
            columns = container.columns
            rollouts = RolloutSet(
                outputs=columns['outputs'],
                inputs=columns['inputs'],
                residuals=columns['residuals'],
                labels=columns['labels'],
                initial_states=columns['initial_states'],
                onset=int(container.metadata['onset']),
                dropped=int(container.metadata.get('dropped_divergence', 0)),
            )
        except KeyError as e:
            raise CorruptFileError(_('Dataset {path} is missing field {field}').format(path=path, field=e)) from e
        if rollouts.outputs.shape[1] < self.run.train.window:
            raise CorruptFileError(_('Dataset {path} is shorter than the window length').format(path=path))
        return rollouts
