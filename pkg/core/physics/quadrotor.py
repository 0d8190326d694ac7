import logging
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from functools import lru_cache
from typing import Any, NamedTuple

import numpy as np

from core.config.i18n import _
from core.config.settings import GRAVITY
from core.utils.exceptions import ConfigurationError, DivergenceError

logger = logging.getLogger(__name__)

STATE_DIM = 12
OUTPUT_DIM = 6
INPUT_DIM = 4
N_MOTORS = 4

# Índices de y = (px, py, pz, phi, theta, psi) dentro do estado.
OUTPUT_INDEX = (0, 1, 2, 6, 7, 8)
_STATE_LABELS = ('px', 'py', 'pz', 'vu', 'vv', 'vw', 'phi', 'theta', 'psi', 'r', 'q', 'p')
OUTPUT_LABELS = tuple(_STATE_LABELS[i] for i in OUTPUT_INDEX)
WRENCH_LABELS = ('U1', 'U2', 'U3', 'U4')

SQRT2 = np.sqrt(2.0)

# Controlador: (passo, estado(s)) -> comando(s) de força/momentos
Controller = Callable[[int, np.ndarray], np.ndarray]


class Convention(StrEnum):
    AS_PRINTED = 'as-printed'
    STANDARD_ZYX = 'standard-zyx'


@dataclass(frozen=True)
class QuadParams:
    """Parâmetros físicos do quadricóptero. Imutável e 'hashable' para permitir caches."""

    m: float
    ixx: float
    iyy: float
    izz: float
    ct: float
    cd: float
    d: float
    g: float = GRAVITY

    def __post_init__(self):
        bad = [name for name, value in asdict(self).items() if not (np.isfinite(value) and value > 0)]
        if bad:
            raise ConfigurationError(
                _('Quadrotor parameters must be finite and strictly positive: {names}').format(names=', '.join(bad))
            )

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> 'QuadParams':
        try:
            return cls(**{name: float(values[name]) for name in ('m', 'ixx', 'iyy', 'izz', 'ct', 'cd', 'd')})
        except KeyError as e:
            raise ConfigurationError(_('Missing quadrotor parameter: {name}').format(name=e.args[0])) from e

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @property
    def hover_wrench(self) -> np.ndarray:
        return np.array([self.m * self.g, 0.0, 0.0, 0.0])

    @property
    def hover_speed_sq(self) -> float:
        """Velocidade quadrada de cada motor em voo pairado, m·g/(4·CT)."""
        return self.m * self.g / (4.0 * self.ct)


@dataclass(frozen=True)
class FaultVector:
    """
    Eficácia multiplicativa de cada motor, Θ ∈ [0,1]^4.
    Apenas uma entrada pode ser inferior a 1 (falha num único atuador).
    """

    theta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        values = tuple(float(v) for v in self.theta)
        if len(values) != N_MOTORS:
            raise ConfigurationError(_('A fault vector needs exactly 4 entries, got {n}').format(n=len(values)))
        if any(not (0.0 <= v <= 1.0) for v in values):
            raise ConfigurationError(_('Fault entries must lie in [0, 1]: {values}').format(values=values))
        if sum(v < 1.0 for v in values) > 1:
            raise ConfigurationError(_('Only single-motor faults are supported: {values}').format(values=values))
        object.__setattr__(self, 'theta', values)

    @classmethod
    def healthy(cls) -> 'FaultVector':
        return cls()

    @classmethod
    def single(cls, motor: int, level: float) -> 'FaultVector':
        """Falha no motor 'motor' (1..4) com eficácia 'level'."""
        if motor not in range(1, N_MOTORS + 1):
            raise ConfigurationError(_('Motor index must be in 1..4, got {motor}').format(motor=motor))
        values = [1.0] * N_MOTORS
        values[motor - 1] = float(level)
        return cls(tuple(values))

    @property
    def is_healthy(self) -> bool:
        return all(v == 1.0 for v in self.theta)

    @property
    def faulty_motor(self) -> int | None:
        for index, value in enumerate(self.theta, start=1):
            if value < 1.0:
                return index
        return None

    def as_array(self) -> np.ndarray:
        return np.array(self.theta)


@dataclass(frozen=True)
class FaultSchedule:
    fault: FaultVector = field(default_factory=FaultVector)
    onset_step: int = 0

    def __post_init__(self):
        if self.onset_step < 0:
            raise ConfigurationError(_('Fault onset must be >= 0, got {onset}').format(onset=self.onset_step))

    def is_active(self, step: int) -> bool:
        return step > self.onset_step and not self.fault.is_healthy


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    horizon: int = 200
    divergence_bound: float = 1.0e3
    convention: Convention = Convention.AS_PRINTED
    tau: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(_('Integrator step dt must be positive, got {dt}').format(dt=self.dt))
        if self.horizon < 1:
            raise ConfigurationError(_('Horizon must be >= 1, got {horizon}').format(horizon=self.horizon))
        if not self.divergence_bound > 0:
            raise ConfigurationError(_('Divergence bound must be positive'))
        object.__setattr__(self, 'convention', Convention(self.convention))
        if self.tau is None:
            object.__setattr__(self, 'tau', self.dt)
        elif self.tau != self.dt:
            raise ConfigurationError(
                _('Sampling period tau must equal dt (one sample per control step): {tau} != {dt}').format(
                    tau=self.tau, dt=self.dt
                )
            )


@dataclass
class Trajectory:
    """
    Trajetória amostrada: horizon + 1 amostras (amostra 0 = estado inicial).
    'inputs' guarda sempre o comando do controlador, nunca o comando com falha.
    Se divergiu, as sequências terminam antes do passo 'diverged_at' e valid = False.
    """

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    applied: np.ndarray
    schedule: FaultSchedule
    valid: bool = True
    diverged_at: int | None = None

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


@dataclass
class RolloutBatch:
    """Conjunto de trajetórias simuladas em paralelo (eixo 0 = trajetória)."""

    states: np.ndarray  # (B, H+1, 12)
    outputs: np.ndarray  # (B, H+1, 6)
    inputs: np.ndarray  # (B, H+1, 4)
    applied: np.ndarray  # (B, H, 4)
    faults: np.ndarray  # (B, 4)
    onset_step: int
    diverged_at: np.ndarray  # (B,), -1 se não divergiu

    @property
    def valid(self) -> np.ndarray:
        return self.diverged_at < 0

    def __len__(self) -> int:
        return self.states.shape[0]

    def trajectory(self, index: int) -> Trajectory:
        stop = int(self.diverged_at[index])
        end = None if stop < 0 else stop
        schedule = FaultSchedule(FaultVector(tuple(self.faults[index])), self.onset_step)
        return Trajectory(
            states=self.states[index, :end],
            outputs=self.outputs[index, :end],
            inputs=self.inputs[index, :end],
            applied=self.applied[index, : None if end is None else max(end - 1, 0)],
            schedule=schedule,
            valid=stop < 0,
            diverged_at=None if stop < 0 else stop,
        )


def output_of(x: np.ndarray) -> np.ndarray:
    """Projeção y = ρ(x)."""
    return x[..., OUTPUT_INDEX]


def _raw_derivative(x: np.ndarray, w: np.ndarray, params: QuadParams, convention: Convention) -> np.ndarray:
    _px, _py, _pz, vu, vv, vw, phi, theta, psi, a1, a2, a3 = np.moveaxis(x, -1, 0)
    u1, u2, u3, u4 = np.moveaxis(w, -1, 0)
    m, ixx, iyy, izz, g = params.m, params.ixx, params.iyy, params.izz, params.g

    sph, cph = np.sin(phi), np.cos(phi)
    sth, cth, tth = np.sin(theta), np.cos(theta), np.tan(theta)
    sps, cps = np.sin(psi), np.cos(psi)

    if convention == Convention.AS_PRINTED:
        r, q, p = a1, a2, a3
        rows = (
            (cph * cps * sth + sph * sps) * vw - (sps * cph - cps * sph * sth) * vv + vu * cps * cth,
            (sph * sps * sth + cph * cps) * vv - (cps * sph - sps * cph * sth) * vw + vu * sps * cth,
            vw * cps * cph - vu * sth + vv * sph * cth,
            r * vv - q * vw + g * sth,
            p * vw - r * vu - g * sph * cth,
            q * vu - p * vv + u1 / m - g * cth * cph,
            r * cph / cth + q * sph / cth,
            q * cph - r * sph,
            p + r * cph * tth + q * sph * tth,
            (u2 - p * q * (iyy - ixx)) / izz,
            (u3 - p * r * (ixx - izz)) / iyy,
            (u4 + q * r * (izz - iyy)) / ixx,
        )
    else:
        # Convenção ZYX: ordem das taxas (P, Q, R) = (rolamento, arfagem, guinada)
        rp, rq, rr = a1, a2, a3
        rows = (
            cth * cps * vu + (sph * sth * cps - cph * sps) * vv + (cph * sth * cps + sph * sps) * vw,
            cth * sps * vu + (sph * sth * sps + cph * cps) * vv + (cph * sth * sps - sph * cps) * vw,
            -sth * vu + sph * cth * vv + cph * cth * vw,
            rr * vv - rq * vw + g * sth,
            rp * vw - rr * vu - g * sph * cth,
            rq * vu - rp * vv + u1 / m - g * cth * cph,
            rp + (rq * sph + rr * cph) * tth,
            rq * cph - rr * sph,
            (rq * sph + rr * cph) / cth,
            (u2 + (iyy - izz) * rq * rr) / ixx,
            (u3 + (izz - ixx) * rp * rr) / iyy,
            (u4 + (ixx - iyy) * rp * rq) / izz,
        )
    return np.stack(rows, axis=-1)


def derivative(
    x: np.ndarray, w: np.ndarray, params: QuadParams, convention: Convention = Convention.AS_PRINTED
) -> np.ndarray:
    """
    Derivada temporal do estado (aceita lotes com dimensões iniciais).

    Args:
        x (np.ndarray): Estado(s), forma (..., 12).
        w (np.ndarray): Força total e momentos (U1..U4), forma (..., 4).
        params (QuadParams): Parâmetros físicos.
        convention (Convention): Equações tal como impressas ou convenção ZYX.
    Returns:
        np.ndarray: Derivada, forma (..., 12).
    Raises:
        DivergenceError: Se o resultado não for finito.
    """
    with np.errstate(all='ignore'):
        dx = _raw_derivative(np.asarray(x, dtype=float), np.asarray(w, dtype=float), params, Convention(convention))
    if not np.all(np.isfinite(dx)):
        raise DivergenceError(_('Non-finite state derivative'))
    return dx


@lru_cache(maxsize=32)
def _mixing_matrices(params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    k = params.d * params.ct * SQRT2
    matrix = np.array([
        [params.ct, params.ct, params.ct, params.ct],
        [-k, -k, k, k],
        [-k, k, k, -k],
        [-params.cd, params.cd, -params.cd, params.cd],
    ])
    try:
        inverse = np.linalg.inv(matrix)
    except np.linalg.LinAlgError as e:
        raise ConfigurationError(_('Motor mixing matrix is singular for the given parameters')) from e
    matrix.setflags(write=False)
    inverse.setflags(write=False)
    return matrix, inverse


def mixing_matrix(params: QuadParams) -> np.ndarray:
    return _mixing_matrices(params)[0]


def mix(cmd: np.ndarray, params: QuadParams) -> np.ndarray:
    """Velocidades quadradas dos motores (..., 4) -> (U1, U2, U3, U4) (..., 4)."""
    return np.asarray(cmd, dtype=float) @ _mixing_matrices(params)[0].T


class Unmixed(NamedTuple):
    command: np.ndarray
    clamped: np.ndarray | bool


def unmix(w: np.ndarray, params: QuadParams, clamp: bool = True) -> Unmixed:
    """
    Inverte a matriz de mistura. Componentes negativas são limitadas a zero
    e sinalizadas em 'clamped' (um booleano por comando).
    Com clamp=False devolve a inversa exata, sem limitação.
    """
    raw = np.asarray(w, dtype=float) @ _mixing_matrices(params)[1].T
    if not clamp:
        return Unmixed(raw, False)
    negative = raw < 0.0
    clamped = negative.any(axis=-1)
    command = np.where(negative, 0.0, raw)
    return Unmixed(command, bool(clamped) if np.ndim(clamped) == 0 else clamped)


def apply_fault(w_commanded: np.ndarray, sched: FaultSchedule, step: int, params: QuadParams) -> np.ndarray:
    """
    Aplica a falha no espaço dos motores: mix(diag(Θ)·unmix(w)) depois do instante de falha.
    Antes (ou com Θ saudável) devolve o comando original sem alterações.
    """
    if step < 0:
        raise ValueError(_('Step must be >= 0, got {step}').format(step=step))
    if not sched.is_active(step):
        return w_commanded
    return mix(sched.fault.as_array() * unmix(w_commanded, params).command, params)


def apply_fault_batch(w_commanded: np.ndarray, faults: np.ndarray, active: bool, params: QuadParams) -> np.ndarray:
    """Versão em lote: cada linha tem o seu Θ. Linhas saudáveis ficam inalteradas."""
    if not active:
        return w_commanded
    healthy = np.all(faults == 1.0, axis=-1, keepdims=True)
    faulted = mix(faults * unmix(w_commanded, params).command, params)
    return np.where(healthy, w_commanded, faulted)


def _raw_rk4(x: np.ndarray, w: np.ndarray, params: QuadParams, dt: float, convention: Convention) -> np.ndarray:
    k1 = _raw_derivative(x, w, params, convention)
    k2 = _raw_derivative(x + 0.5 * dt * k1, w, params, convention)
    k3 = _raw_derivative(x + 0.5 * dt * k2, w, params, convention)
    k4 = _raw_derivative(x + dt * k3, w, params, convention)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(
    x: np.ndarray,
    w: np.ndarray,
    params: QuadParams,
    dt: float,
    convention: Convention = Convention.AS_PRINTED,
    divergence_bound: float | None = None,
) -> np.ndarray:
    """Um passo de Runge-Kutta clássico de 4.ª ordem, com o comando constante no passo."""
    if not dt > 0:
        raise ValueError(_('Integrator step dt must be positive, got {dt}').format(dt=dt))
    with np.errstate(all='ignore'):
        x_next = _raw_rk4(np.asarray(x, dtype=float), np.asarray(w, dtype=float), params, dt, Convention(convention))
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(_('Non-finite state after integration step'))
    if divergence_bound is not None and np.max(np.abs(x_next)) > divergence_bound:
        raise DivergenceError(_('State exceeded divergence bound {bound}').format(bound=divergence_bound))
    return x_next


def simulate_batch(
    x0: np.ndarray,
    controller: Controller,
    faults: np.ndarray,
    onset_step: int,
    cfg: SimConfig,
    params: QuadParams,
) -> RolloutBatch:
    """
    Simula B trajetórias em paralelo com o mesmo instante de falha.

    Em cada passo t = 0..horizon: regista y(t) e u(t) = π(t, x(t)); se t < horizon,
    aplica a falha (ativa para t > onset) e integra. Uma trajetória que diverge é
    congelada no último estado válido e marcada com o passo de divergência.

    Args:
        x0 (np.ndarray): Estados iniciais, forma (B, 12).
        controller (Controller): Política em lote, (passo, (B, 12)) -> (B, 4).
        faults (np.ndarray): Vetores Θ, forma (B, 4).
        onset_step (int): Instante de falha t_F.
        cfg (SimConfig): Passo, horizonte, limite de divergência e convenção.
        params (QuadParams): Parâmetros da planta simulada.
    Returns:
        RolloutBatch: Sequências amostradas e passos de divergência.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    faults = np.broadcast_to(np.asarray(faults, dtype=float), (x0.shape[0], N_MOTORS)).copy()
    n_batch, horizon = x0.shape[0], cfg.horizon

    states = np.empty((n_batch, horizon + 1, STATE_DIM))
    inputs = np.empty((n_batch, horizon + 1, INPUT_DIM))
    applied = np.zeros((n_batch, horizon, INPUT_DIM))
    diverged_at = np.full(n_batch, -1, dtype=np.int64)

    x = x0.copy()
    if not np.all(np.isfinite(x)):
        raise DivergenceError(_('Initial state is not finite'), step=0)

    for t in range(horizon + 1):
        states[:, t] = x
        with np.errstate(all='ignore'):
            u = np.asarray(controller(t, x), dtype=float).reshape(n_batch, INPUT_DIM)
        inputs[:, t] = u
        if t == horizon:
            break

        with np.errstate(all='ignore'):
            w = apply_fault_batch(u, faults, t > onset_step, params)
            applied[:, t] = w
            x_next = _raw_rk4(x, w, params, cfg.dt, cfg.convention)

        bad = ~np.all(np.isfinite(x_next), axis=1) | (np.max(np.abs(x_next), axis=1) > cfg.divergence_bound)
        newly = bad & (diverged_at < 0)
        if newly.any():
            diverged_at[newly] = t + 1
            logger.debug(
                _('{count} trajectories diverged at step {step}').format(count=int(newly.sum()), step=t + 1)
            )
        alive = diverged_at < 0
        x = np.where(alive[:, None], x_next, x)

    return RolloutBatch(
        states=states,
        outputs=output_of(states),
        inputs=inputs,
        applied=applied,
        faults=faults,
        onset_step=onset_step,
        diverged_at=diverged_at,
    )


def simulate(
    x0: np.ndarray, controller: Controller, sched: FaultSchedule, cfg: SimConfig, params: QuadParams
) -> Trajectory:
    """Simula uma única trajetória. A divergência trunca a trajetória e marca-a como inválida."""
    batch = simulate_batch(
        np.asarray(x0, dtype=float).reshape(1, STATE_DIM),
        controller,
        sched.fault.as_array()[None, :],
        sched.onset_step,
        cfg,
        params,
    )
    trajectory = batch.trajectory(0)
    trajectory.schedule = sched
    if not trajectory.valid:
        logger.warning(_('Trajectory diverged at step {step}').format(step=trajectory.diverged_at))
    return trajectory
