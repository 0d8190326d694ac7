import hashlib
import logging
from pathlib import Path

import pandas as pd

from core.config.config import Config
from core.config.i18n import _
from core.config.run_config import RunConfig, build_run_config
from core.config.settings import EXPERIMENT_IDS, PROFILES
from core.handler.storage_handler import StorageHandler
from core.nn.checkpoint import load_checkpoint, save_checkpoint
from core.physics.quadrotor import FaultSchedule, FaultVector
from core.physics.symmetry import equivariance_report
from core.services.data_service import (
    DataService,
    generate_residuals,
    load_trajectory,
    save_trajectory,
    trajectory_table,
)
from core.services.evaluation_service import EvaluatedNetwork, EvaluationService, merge_reports
from core.services.training_service import TrainingService
from core.utils.exceptions import PoisonedRunError, UsageError
from core.utils.utils import create_config_file, file_digest

logger = logging.getLogger(__name__)

SYMMETRY_STEPS = 50


def report_tag(digests: list[str]) -> str:
    """Identificador dos checkpoints de um relatório (o próprio hash, se for só um)."""
    if len(digests) == 1:
        return digests[0]
    return hashlib.sha256('-'.join(digests).encode('utf-8')).hexdigest()[:12]


class ProcessingService:
    """
    Orquestra os fluxos de trabalho principais da aplicação,
    coordenando os diferentes serviços.
    """

    def __init__(self, config: Config, storage: StorageHandler | None = None) -> None:
        self.config = config
        self.storage = storage or StorageHandler()
        self._run: RunConfig | None = None

    @property
    def run(self) -> RunConfig:
        """Configuração tipada, construída e validada na primeira utilização."""
        if self._run is None:
            self._run = build_run_config(self.config)
        return self._run

    def _out_dir(self, out_dir: Path | None) -> Path:
        return Path(out_dir) if out_dir else self.run.output_dir

    def run_init_config(self, config_path: Path) -> Path:
        """Escreve um ficheiro de configuração com os valores do perfil atual."""
        logger.info(_('Writing default configuration ({scale} profile)').format(scale=self.config.SCALE))
        values = {'run.scale': self.config.SCALE, **PROFILES[self.config.SCALE]}
        return create_config_file(config_path=Path(config_path), values=values)

    def run_gen_data(self, out_dir: Path | None = None) -> Path:
        """Gera um conjunto de dados e o respetivo manifesto."""
        logger.info(_('Starting data generation'))
        run = self.run
        path = self._out_dir(out_dir) / f'dataset-s{run.seed}.qfdi'
        path, manifest = DataService(run, self.storage).generate_dataset(path)
        logger.info(
            _('Data generation complete: {rollouts} rollouts, {dropped} dropped').format(
                rollouts=manifest['rollouts'], dropped=manifest['dropped_divergence']
            )
        )
        return path

    def run_train(self, out_dir: Path | None = None, dataset: Path | None = None) -> Path:
        """
        Treina uma rede e grava o checkpoint e o histórico de perdas.
        Com 'dataset', treina sobre esse conjunto fixo; caso contrário gera dados por época.

        Raises:
            PoisonedRunError: Perda não finita; o diagnóstico é gravado junto ao checkpoint.
        """
        run = self.run
        train = run.train
        checkpoint_path = self._out_dir(out_dir) / f'{train.arch}-{train.mode}-s{run.seed}.qfdi'
        logger.info(
            _('Starting training: {arch}, {mode}, hidden {hidden}').format(
                arch=train.arch, mode=str(train.mode), hidden=train.hidden
            )
        )

        data_service = DataService(run, self.storage)
        rollouts = data_service.load_dataset(dataset) if dataset else None

        try:
            result = TrainingService(run, data_service).train(rollouts)
        except PoisonedRunError as e:
            diagnostics_path = checkpoint_path.with_suffix('.diagnostics.json')
            self.storage.write_json(diagnostics_path, {'error': str(e), **e.diagnostics})
            logger.error(_('Training aborted; diagnostics written to {path}').format(path=diagnostics_path))
            raise

        extra = {
            'scale': run.scale,
            'param_set': run.param_set,
            'controller': run.control.controller,
            'convention': str(run.sim.convention),
            'epochs': result.epochs,
            'converged': result.converged,
            'final_learning_rate': result.learning_rate,
            'dataset': file_digest(dataset) if dataset else None,
        }
        save_checkpoint(result.network, checkpoint_path, run.seed, extra=extra, storage=self.storage)
        self.storage.write_csv(checkpoint_path.with_suffix('.loss.csv'), result.history)
        logger.info(
            _('Training complete after {epochs} epochs (converged: {converged})').format(
                epochs=result.epochs, converged=result.converged
            )
        )
        return checkpoint_path

    def _load_networks(self, checkpoints: list[Path]) -> list[EvaluatedNetwork]:
        if not checkpoints:
            raise UsageError(_('At least one --checkpoint is required'))
        nets = []
        for path in checkpoints:
            network, _metadata = load_checkpoint(path, storage=self.storage)
            nets.append(EvaluatedNetwork(file_digest(path), network))
        return nets

    @staticmethod
    def _check_experiment(experiment: str | None) -> str:
        if experiment not in EXPERIMENT_IDS:
            raise UsageError(
                _("Unknown experiment '{name}'. Expected one of: {ids}").format(
                    name=experiment, ids=', '.join(EXPERIMENT_IDS)
                )
            )
        return experiment

    def run_eval(self, checkpoints: list[Path], experiment: str, out_dir: Path | None = None) -> Path:
        """
        Corre uma experiência e grava o relatório CSV (uma linha por ponto de curva)
        e o resumo JSON, com nomes '<experiência>-<hash>'.
        """
        experiment = self._check_experiment(experiment)
        nets = self._load_networks(checkpoints)
        report = EvaluationService(self.run).run_experiment(experiment, nets)

        stem = f'{experiment}-{report_tag([entry.name for entry in nets])}'
        out = self._out_dir(out_dir)
        csv_path = self.storage.write_csv(out / f'{stem}.csv', report.data)
        self.storage.write_json(out / f'{stem}.json', report.summary)
        logger.info(_('Experiment {name} written to {path}').format(name=experiment, path=csv_path))
        return csv_path

    def run_compare(
        self,
        reports: list[Path] | None = None,
        checkpoints: list[Path] | None = None,
        experiment: str | None = None,
        out_dir: Path | None = None,
    ) -> Path:
        """
        Junta relatórios num único CSV. Os checkpoints indicados são primeiro avaliados
        um a um na experiência pedida; os relatórios existentes são lidos tal como estão.

        Raises:
            UsageError: Nada a comparar ou relatórios de experiências diferentes.
        """
        paths = [Path(path) for path in reports or []]
        if checkpoints:
            experiment = self._check_experiment(experiment)
            paths.extend(self.run_eval([checkpoint], experiment, out_dir) for checkpoint in checkpoints)
        if not paths:
            raise UsageError(_('Nothing to compare: give report files or --checkpoint with --experiment'))

        frames = [self.storage.read_csv(path) for path in paths]
        merged = merge_reports(frames)
        name = str(merged['experiment'].iloc[0]) if len(merged) else 'empty'
        tag = report_tag([file_digest(path) for path in paths])
        out_path = self._out_dir(out_dir) / f'{name}-compare-{tag}.csv'
        self.storage.write_csv(out_path, merged)
        logger.info(
            _('Merged {n} reports ({rows} rows) into {path}').format(n=len(frames), rows=len(merged), path=out_path)
        )
        return out_path

    def run_simulate(self, motor: int = 0, level: float = 1.0, out_dir: Path | None = None) -> Path:
        """
        Simula uma trajetória com o controlador configurado e exporta-a.
        'motor' = 0 simula o voo sem falha; a falha começa em run.onset.
        """
        run = self.run
        fault = FaultVector.single(motor, level) if motor else FaultVector.healthy()
        trajectory = DataService(run, self.storage).simulate_trajectory(FaultSchedule(fault, run.onset))

        tag = f'motor{fault.faulty_motor}-{level:.2f}' if fault.faulty_motor else 'healthy'
        path = self._out_dir(out_dir) / f'trajectory-{tag}-s{run.seed}.qfdi'
        save_trajectory(trajectory, path, run.sim, run.params, storage=self.storage)
        logger.info(
            _('Trajectory with {n} samples written to {path} (valid: {valid})').format(
                n=trajectory.n_samples, path=path, valid=trajectory.valid
            )
        )
        return path

    def run_residuals(self, trajectory_path: Path, out_dir: Path | None = None) -> Path:
        """Calcula os resíduos de uma trajetória exportada face ao modelo nominal e grava a tabela CSV."""
        trajectory, sim, _params = load_trajectory(trajectory_path, storage=self.storage)
        residuals = generate_residuals(trajectory, self.run.params, sim)
        out_path = self._out_dir(out_dir) / f'{Path(trajectory_path).stem}.residuals.csv'
        self.storage.write_csv(out_path, trajectory_table(trajectory, residuals))
        return out_path

    def run_check_symmetry(self, out_dir: Path | None = None) -> pd.DataFrame:
        """Relatório de equivariância (convenção × caso de rotação)."""
        logger.info(_('Checking rotation symmetry'))
        report = equivariance_report(self.run.params, steps=SYMMETRY_STEPS, seed=self.run.seed)
        self.storage.write_csv(self._out_dir(out_dir) / 'symmetry-report.csv', report)
        return report
