import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

from core.config.config import Config
from core.config.i18n import _
from core.config.settings import PARAMETER_SETS
from core.nn.features import FeatureMode
from core.nn.networks import ARCHITECTURES
from core.physics.control import CONTROLLER_KINDS, LQR_WEIGHTINGS, SafetySpec
from core.physics.quadrotor import Convention, QuadParams, SimConfig
from core.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlConfig:
    controller: str = 'lqr'
    q_weight: float = 1.0
    r_weight: float = 1.0e-3
    weighting: str = 'input-scaled'
    safety: SafetySpec = SafetySpec()
    init_radius: float = 0.5
    init_angle: float = 0.2
    init_rate: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    n1: int = 20
    n_per_epoch: int = 0
    fault_levels: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    fault_motor: int = 2
    window: int = 100
    n_buf: int = 50_000
    n_bs: int = 512
    iter_max: int = 200
    n_max: int = 200
    n_min: int = 10
    epsilon: float = 0.01
    stop_loss: float = 1.0e-3
    mode: FeatureMode = FeatureMode.MODEL_FREE
    arch: str = 'lstm'
    hidden: int = 128
    learning_rate: float = 1.0e-3
    plateau_patience: int = 10

    @property
    def d(self) -> int:
        return len(self.fault_levels)

    @property
    def max_epochs(self) -> int:
        return min(self.iter_max, self.n_max)

    def initial_conditions_per_epoch(self, windows_per_rollout: int) -> int:
        """N1 efetivo: 'n_per_epoch' (se > 0) é convertido em condições iniciais."""
        if self.n_per_epoch > 0:
            return max(1, math.ceil(self.n_per_epoch / (self.d * windows_per_rollout)))
        return self.n1


@dataclass(frozen=True)
class EvalConfig:
    theta_tol: float = 0.2
    n_test_per_class: int = 50
    min_overlap: int = 50
    level_tolerance: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    """Configuração tipada de uma execução, montada a partir do Config (perfil + ficheiro + linha de comandos)."""

    sim: SimConfig
    onset: int
    control: ControlConfig
    train: TrainConfig
    eval: EvalConfig
    params: QuadParams
    param_set: str
    seed: int
    scale: str
    workers: int
    output_dir: Path

    @property
    def windows_per_rollout(self) -> int:
        return self.sim.horizon - self.onset + 1

    def with_train(self, **changes) -> 'RunConfig':
        return replace(self, train=replace(self.train, **changes))


def _check(condition: bool, message: str) -> None:
    if not condition:
        logger.error(message)
        raise ConfigurationError(message)


def _quad_params(config: Config) -> tuple[str, QuadParams]:
    param_set = config.get_str('params.set')
    if param_set not in PARAMETER_SETS:
        raise ConfigurationError(
            _("Unknown parameter set '{name}'. Expected one of: {names}").format(
                name=param_set, names=', '.join(PARAMETER_SETS)
            )
        )
    values = dict(PARAMETER_SETS[param_set])
    for name in values:
        key = f'params.{name}'
        if config.has(key):
            values[name] = config.get_float(key)
    return param_set, QuadParams.from_mapping(values)


def build_run_config(config: Config) -> RunConfig:
    """
    Converte e valida todas as chaves do Config.

    Raises:
        ConfigurationError: Valores inválidos ou incoerentes entre si.
    """
    sim = SimConfig(
        dt=config.get_float('sim.dt'),
        horizon=config.get_int('sim.horizon'),
        divergence_bound=config.get_float('sim.divergence_bound'),
        convention=_enum(Convention, config.get_str('sim.convention'), 'sim.convention'),
    )
    onset = config.get_int('sim.onset')

    center = config.get_float_list('control.safe_center')
    _check(len(center) == 3, _('control.safe_center needs three comma-separated numbers'))
    control = ControlConfig(
        controller=config.get_str('control.controller'),
        q_weight=config.get_float('control.q_weight'),
        r_weight=config.get_float('control.r_weight'),
        weighting=config.get_str('control.weighting'),
        safety=SafetySpec(
            center=tuple(center),
            radius=config.get_float('control.safe_radius'),
            cbf_alpha=config.get_float('control.cbf_alpha'),
            max_thrust_ratio=config.get_float('control.max_thrust_ratio'),
        ),
        init_radius=config.get_float('control.init_radius'),
        init_angle=config.get_float('control.init_angle'),
        init_rate=config.get_float('control.init_rate'),
    )
    _check(
        control.controller in CONTROLLER_KINDS,
        _("Unknown controller '{kind}'").format(kind=control.controller),
    )
    _check(
        control.weighting in LQR_WEIGHTINGS,
        _("Unknown LQR weighting '{name}'").format(name=control.weighting),
    )

    train = TrainConfig(
        n1=config.get_int('train.n1'),
        n_per_epoch=config.get_int('train.n_per_epoch'),
        fault_levels=tuple(config.get_float_list('train.fault_levels')),
        fault_motor=config.get_int('train.fault_motor'),
        window=config.get_int('train.window'),
        n_buf=config.get_int('train.n_buf'),
        n_bs=config.get_int('train.n_bs'),
        iter_max=config.get_int('train.iter_max'),
        n_max=config.get_int('train.n_max'),
        n_min=config.get_int('train.n_min'),
        epsilon=config.get_float('train.epsilon'),
        stop_loss=config.get_float('train.stop_loss'),
        mode=_enum(FeatureMode, config.get_str('train.mode'), 'train.mode'),
        arch=config.get_str('train.arch'),
        hidden=config.get_int('train.hidden'),
        learning_rate=config.get_float('train.learning_rate'),
        plateau_patience=config.get_int('train.plateau_patience'),
    )
    evaluation = EvalConfig(
        theta_tol=config.get_float('eval.theta_tol'),
        n_test_per_class=config.get_int('eval.n_test_per_class'),
        min_overlap=config.get_int('eval.min_overlap'),
        level_tolerance=config.get_float('eval.level_tolerance'),
    )
    param_set, params = _quad_params(config)

    _check(0 <= onset < sim.horizon, _('sim.onset must lie in [0, horizon)'))
    _check(train.window >= 1, _('train.window must be >= 1'))
    _check(onset + 1 >= train.window, _('train.window must not exceed onset + 1 samples'))
    _check(train.n1 >= 1 or train.n_per_epoch > 0, _('train.n1 must be >= 1'))
    _check(
        all(0.0 <= level <= 1.0 for level in train.fault_levels),
        _('train.fault_levels must lie in [0, 1]'),
    )
    _check(1.0 in train.fault_levels, _('train.fault_levels must include 1.0 (no fault)'))
    _check(train.fault_motor in range(1, 5), _('train.fault_motor must be in 1..4'))
    _check(train.n_buf >= 1 and train.n_bs >= 1, _('train.n_buf and train.n_bs must be >= 1'))
    _check(train.n_min < train.n_max, _('train.n_min must be smaller than train.n_max'))
    _check(train.epsilon > 0, _('train.epsilon must be positive'))
    _check(train.learning_rate > 0, _('train.learning_rate must be positive'))
    _check(train.arch in ARCHITECTURES, _("Unknown architecture '{arch}'").format(arch=train.arch))
    _check(train.hidden >= 2, _('train.hidden must be >= 2'))
    _check(0.0 < evaluation.theta_tol < 1.0, _('eval.theta_tol must lie in (0, 1)'))
    _check(evaluation.n_test_per_class >= 1, _('eval.n_test_per_class must be >= 1'))

    run = RunConfig(
        sim=sim,
        onset=onset,
        control=control,
        train=train,
        eval=evaluation,
        params=params,
        param_set=param_set,
        seed=config.SEED,
        scale=config.SCALE,
        workers=config.WORKERS,
        output_dir=config.OUTPUT_DIR,
    )
    logger.debug(_('Run configuration built: {run}').format(run=run))
    return run


def _enum(enum_cls, value: str, key: str):
    try:
        return enum_cls(value)
    except ValueError as e:
        allowed = ', '.join(str(member) for member in enum_cls)
        raise ConfigurationError(
            _("Invalid value '{value}' for {key}. Expected one of: {allowed}").format(
                value=value, key=key, allowed=allowed
            )
        ) from e
