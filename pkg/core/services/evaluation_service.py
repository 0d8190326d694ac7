import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
import pandas as pd

from core.config.i18n import _
from core.config.run_config import RunConfig
from core.config.settings import EXPERIMENT_IDS, PARAMETER_SETS
from core.nn.networks import N_OUTPUTS, FdiNetwork
from core.physics.control import CONTROLLER_KINDS
from core.physics.quadrotor import N_MOTORS, QuadParams
from core.physics.symmetry import TRAINED_ROLE, RotationCase, canonicalize_arrays, canonicalize_window, rotation_cases
from core.services.data_service import DataService, RolloutSet, TrajectoryWindow
from core.utils.exceptions import ConfigurationError, UsageError
from core.utils.utils import make_rng

logger = logging.getLogger(__name__)

EVAL_CHUNK = 512
REPORT_COLUMNS = [
    'experiment',
    'checkpoint',
    'arch',
    'mode',
    'controller',
    'param_set',
    'fault_class',
    'motor',
    'fault_level',
    'rotation_case',
    'overlap',
    'n_windows',
    'n_detected',
    'n_correct',
    'n_level_correct',
    'detection_rate',
    'accuracy',
    'level_accuracy',
]
_CONDITION_KEYS = ['checkpoint', 'arch', 'mode', 'controller', 'param_set']


@dataclass(frozen=True)
class Verdict:
    """
    Decisão para uma janela. 'motor' só existe se houver deteção; 'level' é a menor
    eficácia prevista (grau da falha) e 'scores' as previsões (caso × papel).
    """

    fault_detected: bool
    motor: int | None
    min_score: float
    case_index: int
    level: float
    scores: np.ndarray


@dataclass
class BatchVerdicts:
    detected: np.ndarray  # (B,) bool
    motor: np.ndarray  # (B,) 0 quando não há deteção
    argmin_motor: np.ndarray  # (B,) motor no mínimo, com ou sem deteção
    min_score: np.ndarray
    case_index: np.ndarray  # n do caso de rotação no mínimo
    scores: np.ndarray  # (B, 4, 4)

    def __len__(self) -> int:
        return self.detected.shape[0]

    def verdict(self, index: int) -> Verdict:
        detected = bool(self.detected[index])
        return Verdict(
            fault_detected=detected,
            motor=int(self.motor[index]) if detected else None,
            min_score=float(self.min_score[index]),
            case_index=int(self.case_index[index]),
            level=float(self.min_score[index]),
            scores=self.scores[index],
        )


@dataclass(frozen=True)
class EvaluatedNetwork:
    """Rede a avaliar, identificada pelo hash do checkpoint."""

    name: str
    network: FdiNetwork

    @property
    def arch(self) -> str:
        return self.network.arch

    @property
    def mode(self) -> str:
        return str(self.network.spec.mode)


@dataclass(frozen=True)
class TestClass:
    """Classe de teste: motor com falha (0 = sem falha) e respetiva eficácia."""

    name: str
    motor: int
    level: float

    @classmethod
    def healthy(cls) -> 'TestClass':
        return cls('none', 0, 1.0)

    @classmethod
    def complete(cls, motor: int) -> 'TestClass':
        return cls(f'motor-{motor}', motor, 0.0)

    @property
    def is_healthy(self) -> bool:
        return self.motor == 0

    def fault_vector(self) -> np.ndarray:
        theta = np.ones(N_MOTORS)
        if not self.is_healthy:
            theta[self.motor - 1] = self.level
        return theta


@dataclass(frozen=True)
class TestCondition:
    controller: str
    param_set: str


@dataclass
class ExperimentReport:
    experiment: str
    data: pd.DataFrame
    summary: dict[str, Any]


def predict_batch(
    net: FdiNetwork,
    y: np.ndarray,
    u: np.ndarray,
    resid: np.ndarray | None,
    theta_tol: float,
    params: QuadParams | None = None,
    cases: tuple[RotationCase, ...] | None = None,
) -> BatchVerdicts:
    """
    Regra de previsão: a rede avalia as quatro versões canonizadas de cada janela; há
    falha se o menor valor previsto for inferior a 'theta_tol'. O motor físico resulta
    do papel no mínimo, através do mapa de motores do caso correspondente. Empates
    resolvem-se pelo primeiro caso e, dentro dele, pelo primeiro papel.

    Args:
        y, u, resid: Janelas (B, T, 6), (B, T, 4) e (B, T, 6) ou None.
    """
    spec = net.spec
    params = params or _nominal()
    cases = cases or rotation_cases(params)
    if spec.uses_residuals and resid is None:
        raise ValueError(_("Feature mode '{mode}' needs residuals").format(mode=str(spec.mode)))
    if not spec.uses_residuals:
        resid = None

    batch = y.shape[0]
    scores = np.empty((batch, len(cases), N_OUTPUTS))
    for start in range(0, batch, EVAL_CHUNK):
        end = start + EVAL_CHUNK
        chunk_resid = None if resid is None else resid[start:end]
        for index, case in enumerate(cases):
            y_c, u_c, r_c = canonicalize_arrays(y[start:end], u[start:end], chunk_resid, case, params)
            scores[start:end, index] = net.forward(spec.build(y_c, u_c, r_c))
    return _decide(scores, cases, theta_tol)


def predict(net: FdiNetwork, window: TrajectoryWindow, theta_tol: float, params: QuadParams | None = None) -> Verdict:
    """Decisão para uma única janela, avaliada nas suas quatro versões canonizadas."""
    spec = net.spec
    params = params or _nominal()
    cases = rotation_cases(params)
    if spec.uses_residuals and window.resid_seq is None:
        raise ValueError(_("Feature mode '{mode}' needs residuals").format(mode=str(spec.mode)))

    scores = np.empty((1, len(cases), N_OUTPUTS))
    for index, case in enumerate(cases):
        rotated = canonicalize_window(window, case, params)
        resid = rotated.resid_seq[None] if spec.uses_residuals else None
        scores[0, index] = net.forward(spec.build(rotated.y_seq[None], rotated.u_seq[None], resid))[0]
    return _decide(scores, cases, theta_tol).verdict(0)


def _decide(scores: np.ndarray, cases: tuple[RotationCase, ...], theta_tol: float) -> BatchVerdicts:
    """Mínimo sobre (caso, papel) das previsões (B, 4, 4) e respetivo motor físico."""
    batch = scores.shape[0]
    flat = scores.reshape(batch, -1)
    best = np.argmin(flat, axis=1)
    min_score = flat[np.arange(batch), best]
    case_position, role_index = np.divmod(best, N_OUTPUTS)
    argmin_motor = np.array(
        [cases[c].motor_for_role(r + 1) for c, r in zip(case_position, role_index, strict=True)], dtype=int
    )
    detected = min_score < theta_tol
    return BatchVerdicts(
        detected=detected,
        motor=np.where(detected, argmin_motor, 0),
        argmin_motor=argmin_motor,
        min_score=min_score,
        case_index=np.array([cases[c].n for c in case_position], dtype=int),
        scores=scores,
    )


def _nominal() -> QuadParams:
    return QuadParams.from_mapping(PARAMETER_SETS['nominal'])


def merge_reports(frames: list[pd.DataFrame]) -> pd.DataFrame:
    """
    Junta relatórios da mesma experiência (vários checkpoints ou modos) num só.

    Raises:
        UsageError: Relatórios de experiências diferentes ou com colunas inesperadas.
    """
    if not frames:
        raise UsageError(_('No reports to compare'))
    for frame in frames:
        if list(frame.columns) != REPORT_COLUMNS:
            raise UsageError(_('Report columns do not match the expected schema'))
    experiments = sorted({str(value) for frame in frames for value in frame['experiment'].unique()})
    if len(experiments) != 1:
        raise UsageError(
            _('Cannot merge reports of different experiments: {ids}').format(ids=', '.join(experiments))
        )
    return pd.concat(frames, ignore_index=True)[REPORT_COLUMNS]


class EvaluationService:
    """
    Protocolos de avaliação: gera os conjuntos de teste (sementes 'eval/<experiência>/<classe>')
    e calcula curvas de deteção e isolamento em função da sobreposição com a falha.
    """

    def __init__(self, run: RunConfig, data_service: DataService | None = None):
        self.run = run
        self.data_service = data_service or DataService(run)
        self.cases = rotation_cases(run.params)
        self._rollouts: dict[tuple[str, str, str, str], RolloutSet] = {}

    # -- conjuntos de teste ---------------------------------------------------------

    def plant_for(self, param_set: str) -> QuadParams:
        if param_set == self.run.param_set:
            return self.run.params
        if param_set not in PARAMETER_SETS:
            raise ConfigurationError(_("Unknown parameter set '{name}'").format(name=param_set))
        return QuadParams.from_mapping(PARAMETER_SETS[param_set])

    def test_rollouts(self, experiment: str, test_class: TestClass, condition: TestCondition) -> RolloutSet:
        """
        Trajetórias de teste de uma classe. As condições iniciais dependem apenas da
        experiência e da classe, pelo que são as mesmas em todas as condições.
        Os resíduos usam sempre o modelo nominal da configuração.
        """
        key = (experiment, test_class.name, condition.controller, condition.param_set)
        if key not in self._rollouts:
            rng = make_rng(self.run.seed, 'eval', experiment, test_class.name)
            initial_states = self.data_service.sample_initial_states(rng, self.run.eval.n_test_per_class)
            self._rollouts[key] = self.data_service.simulate_rollouts(
                initial_states,
                test_class.fault_vector()[None],
                params=self.plant_for(condition.param_set),
                controller_kind=condition.controller,
            )
            logger.info(
                _('Test set {cls} ({controller}, {param_set}): {n} trajectories').format(
                    cls=test_class.name,
                    controller=condition.controller,
                    param_set=condition.param_set,
                    n=len(self._rollouts[key]),
                )
            )
        return self._rollouts[key]

    # -- avaliação ---------------------------------------------------------------

    def _correctness(self, verdicts: BatchVerdicts, test_class: TestClass) -> tuple[np.ndarray, np.ndarray]:
        tolerance = self.run.eval.level_tolerance
        if test_class.is_healthy:
            correct = ~verdicts.detected
            level_correct = np.abs(verdicts.min_score - 1.0) <= tolerance
        else:
            correct = verdicts.detected & (verdicts.motor == test_class.motor)
            level_correct = (verdicts.argmin_motor == test_class.motor) & (
                np.abs(verdicts.min_score - test_class.level) <= tolerance
            )
        return correct, level_correct

    def evaluate_class(
        self, entry: EvaluatedNetwork, rollouts: RolloutSet, test_class: TestClass
    ) -> tuple[list[dict[str, Any]], np.ndarray]:
        """
        Curva de uma classe para uma rede: uma linha por sobreposição k − onset.

        Returns:
            tuple[list[dict], np.ndarray]: Linhas do relatório e matriz (trajetória, sobreposição) de acertos.
        """
        window = entry.network.spec.window
        onset = rollouts.onset
        horizon = rollouts.outputs.shape[1] - 1
        if window > onset + 1:
            raise ConfigurationError(
                _('Network window {T} does not fit before the fault onset {onset}').format(T=window, onset=onset)
            )

        overlaps = range(horizon - onset + 1)
        hits = np.zeros((len(rollouts), len(overlaps)), dtype=bool)
        rows = []
        for overlap in overlaps:
            end = onset + overlap + 1
            sl = slice(end - window, end)
            if len(rollouts) == 0:
                continue
            verdicts = predict_batch(
                entry.network,
                rollouts.outputs[:, sl],
                rollouts.inputs[:, sl],
                rollouts.residuals[:, sl],
                self.run.eval.theta_tol,
                self.run.params,
                self.cases,
            )
            correct, level_correct = self._correctness(verdicts, test_class)
            hits[:, overlap] = correct
            n = len(verdicts)
            rows.append({
                'overlap': overlap,
                'n_windows': n,
                'n_detected': int(verdicts.detected.sum()),
                'n_correct': int(correct.sum()),
                'n_level_correct': int(level_correct.sum()),
                'detection_rate': float(verdicts.detected.mean()),
                'accuracy': float(correct.mean()),
                'level_accuracy': float(level_correct.mean()),
            })
        return rows, hits

    def evaluate(
        self,
        experiment: str,
        nets: list[EvaluatedNetwork],
        classes: list[TestClass],
        conditions: list[TestCondition],
    ) -> tuple[pd.DataFrame, list[dict[str, Any]]]:
        """Avalia todas as combinações rede × condição × classe."""
        rows = []
        latency = []
        for condition in conditions:
            for test_class in classes:
                rollouts = self.test_rollouts(experiment, test_class, condition)
                rotation_case = 0 if test_class.is_healthy else self._case_for_motor(test_class.motor)
                for entry in nets:
                    class_rows, hits = self.evaluate_class(entry, rollouts, test_class)
                    base = {
                        'experiment': experiment,
                        'checkpoint': entry.name,
                        'arch': entry.arch,
                        'mode': entry.mode,
                        'controller': condition.controller,
                        'param_set': condition.param_set,
                        'fault_class': test_class.name,
                        'motor': test_class.motor,
                        'fault_level': test_class.level,
                        'rotation_case': rotation_case,
                    }
                    rows.extend({**base, **row} for row in class_rows)
                    if not test_class.is_healthy:
                        latency.append({**base, **_latency(hits)})
                    logger.info(
                        _('{experiment}: {name} on {cls} ({controller}, {param_set}) evaluated').format(
                            experiment=experiment,
                            name=entry.name,
                            cls=test_class.name,
                            controller=condition.controller,
                            param_set=condition.param_set,
                        )
                    )
        return pd.DataFrame(rows, columns=REPORT_COLUMNS), latency

    def _case_for_motor(self, motor: int) -> int:
        for case in self.cases:
            if case.motor_for_role(TRAINED_ROLE) == motor:
                return case.n
        raise ConfigurationError(_('No rotation case maps motor {motor} to role 2').format(motor=motor))

    # -- experiências ----------------------------------------------------------------

    def _single_motor_classes(self) -> list[TestClass]:
        return [TestClass.complete(motor) for motor in range(1, N_MOTORS + 1)] + [TestClass.healthy()]

    def _default_condition(self) -> TestCondition:
        return TestCondition(self.run.control.controller, self.run.param_set)

    def experiment_rotation_cases(self, nets: list[EvaluatedNetwork]) -> ExperimentReport:
        """Falha completa em cada motor físico e sem falha, com a rede treinada no motor #2."""
        experiment = 'rotation-cases'
        data, latency = self.evaluate(experiment, nets, self._single_motor_classes(), [self._default_condition()])
        summary = self.summarize(experiment, data)
        summary['latency'] = latency
        return ExperimentReport(experiment, data, summary)

    def experiment_fault_levels(self, nets: list[EvaluatedNetwork]) -> ExperimentReport:
        """Precisão por nível de falha no motor de treino (MLP e LSTM lado a lado)."""
        experiment = 'fault-levels'
        motor = self.run.train.fault_motor
        classes = [
            TestClass.healthy() if level >= 1.0 else TestClass(f'level-{level:.2f}', motor, float(level))
            for level in self.run.train.fault_levels
        ]
        data = self.evaluate(experiment, nets, classes, [self._default_condition()])[0]
        return ExperimentReport(experiment, data, self.summarize(experiment, data))

    def experiment_controller_shift(self, nets: list[EvaluatedNetwork]) -> ExperimentReport:
        """Dados de teste gerados com o LQR e com o filtro CBF-QP."""
        experiment = 'controller-shift'
        conditions = [TestCondition(kind, self.run.param_set) for kind in CONTROLLER_KINDS]
        data = self.evaluate(experiment, nets, self._single_motor_classes(), conditions)[0]
        summary = self.summarize(experiment, data)
        summary['shift'] = _drops(summary['conditions'], 'controller', 'lqr')
        return ExperimentReport(experiment, data, summary)

    def experiment_param_perturbation(self, nets: list[EvaluatedNetwork]) -> ExperimentReport:
        """Planta com parâmetros alterados; os resíduos continuam a usar o modelo nominal."""
        experiment = 'param-perturbation'
        conditions = [TestCondition(self.run.control.controller, name) for name in PARAMETER_SETS]
        data = self.evaluate(experiment, nets, self._single_motor_classes(), conditions)[0]
        summary = self.summarize(experiment, data)
        summary['shift'] = _drops(summary['conditions'], 'param_set', self.run.param_set)
        return ExperimentReport(experiment, data, summary)

    def run_experiment(self, experiment: str, nets: list[EvaluatedNetwork]) -> ExperimentReport:
        runners = {
            'rotation-cases': self.experiment_rotation_cases,
            'fault-levels': self.experiment_fault_levels,
            'controller-shift': self.experiment_controller_shift,
            'param-perturbation': self.experiment_param_perturbation,
        }
        if experiment not in runners:
            raise UsageError(
                _("Unknown experiment '{name}'. Expected one of: {ids}").format(
                    name=experiment, ids=', '.join(EXPERIMENT_IDS)
                )
            )
        if not nets:
            raise UsageError(_('At least one checkpoint is required'))
        logger.info(_('Running experiment {name} with {n} network(s)').format(name=experiment, n=len(nets)))
        return runners[experiment](nets)

    def summarize(self, experiment: str, data: pd.DataFrame) -> dict[str, Any]:
        """
        Resumo para sobreposições >= eval.min_overlap: precisão por classe e a média
        das classes por condição (rede, controlador, conjunto de parâmetros).
        """
        high = data[data['overlap'] >= self.run.eval.min_overlap]
        class_keys = [*_CONDITION_KEYS, 'fault_class', 'motor', 'fault_level']
        per_class = high.groupby(class_keys, sort=False)[['n_windows', 'n_correct', 'n_level_correct', 'n_detected']]
        per_class = per_class.sum().reset_index()
        windows = per_class['n_windows'].clip(lower=1)
        per_class['accuracy'] = per_class['n_correct'] / windows
        per_class['level_accuracy'] = per_class['n_level_correct'] / windows
        per_class['detection_rate'] = per_class['n_detected'] / windows

        per_condition = (
            per_class.groupby(_CONDITION_KEYS, sort=False)[['accuracy', 'level_accuracy']].mean().reset_index()
        )
        return {
            'experiment': experiment,
            'checkpoints': sorted(data['checkpoint'].unique().tolist()),
            'seed': self.run.seed,
            'theta_tol': self.run.eval.theta_tol,
            'min_overlap': self.run.eval.min_overlap,
            'n_test_per_class': self.run.eval.n_test_per_class,
            'classes': per_class.to_dict(orient='records'),
            'conditions': per_condition.to_dict(orient='records'),
        }


def _latency(hits: np.ndarray) -> dict[str, Any]:
    """Primeira sobreposição em que o veredicto de cada trajetória fica correto."""
    if hits.size == 0:
        return {'mean_latency_steps': None, 'never_correct': 0.0}
    ever = hits.any(axis=1)
    first = np.argmax(hits, axis=1)
    return {
        'mean_latency_steps': float(first[ever].mean()) if ever.any() else None,
        'never_correct': float(1.0 - ever.mean()),
    }


def _drops(conditions: list[dict[str, Any]], column: str, reference: str) -> list[dict[str, Any]]:
    """Queda de precisão de cada condição face à de referência, por checkpoint."""
    frame = pd.DataFrame(conditions)
    if frame.empty:
        return []
    baseline = frame[frame[column] == reference].set_index('checkpoint')['accuracy']
    frame['accuracy_drop'] = frame['checkpoint'].map(baseline) - frame['accuracy']
    return frame[['checkpoint', 'mode', column, 'accuracy', 'accuracy_drop']].to_dict(orient='records')
