import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.linalg

from core.config.i18n import _
from core.physics.quadrotor import (
    INPUT_DIM,
    STATE_DIM,
    Controller,
    Convention,
    QuadParams,
    derivative,
    mix,
    unmix,
)
from core.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

CONTROLLER_KINDS = ('lqr', 'cbf-qp')

RICCATI_TOL = 1.0e-8
RICCATI_MAX_ITER = 50

ACTUATED_TOL = 1.0e-9
CBF_MIN_GAIN = 1.0e-2

LQR_WEIGHTINGS = ('input-scaled', 'reference')
REFERENCE_Q = 1.0
REFERENCE_R = 0.1


@dataclass(frozen=True, eq=False)
class LqrGain:
    """Ganho constante K (4×12) em torno do voo pairado e a solução P da equação de Riccati."""

    K: np.ndarray
    u_trim: np.ndarray
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    residual: float
    eigenvalues: np.ndarray

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(self.eigenvalues.real))


@dataclass(frozen=True)
class SafetySpec:
    """Esfera de segurança (centro, raio) e ganho de classe K da barreira."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    cbf_alpha: float = 1.0
    max_thrust_ratio: float = 2.0

    def __post_init__(self):
        if len(self.center) != 3:
            raise ConfigurationError(_('Safe-set center needs 3 coordinates'))
        if not self.radius > 0:
            raise ConfigurationError(_('Safe-set radius must be positive, got {radius}').format(radius=self.radius))
        if not self.cbf_alpha > 0:
            raise ConfigurationError(_('CBF alpha must be positive, got {alpha}').format(alpha=self.cbf_alpha))
        if not self.max_thrust_ratio > 1:
            raise ConfigurationError(
                _('Maximum thrust ratio must exceed 1, got {ratio}').format(ratio=self.max_thrust_ratio)
            )
        object.__setattr__(self, 'center', tuple(float(c) for c in self.center))

    def barrier(self, x: np.ndarray) -> np.ndarray:
        """h(x) = raio² − ‖posição − centro‖²"""
        e = x[..., 0:3] - np.asarray(self.center)
        return self.radius**2 - np.sum(e * e, axis=-1)


class FilteredInput(NamedTuple):
    wrench: np.ndarray
    active: np.ndarray | bool
    degenerate: np.ndarray | bool
    saturated: np.ndarray | bool = False


def linearize(params: QuadParams, convention: Convention = Convention.AS_PRINTED) -> tuple[np.ndarray, np.ndarray]:
    """
    Jacobianos por diferenças centrais da dinâmica no ponto (0, u_trim).
    A coluna j usa a perturbação h = 1e-6·max(1, |x_j|).

    Returns:
        tuple[np.ndarray, np.ndarray]: A (12×12) e B (12×4).
    """
    x0 = np.zeros(STATE_DIM)
    u0 = params.hover_wrench

    A = np.empty((STATE_DIM, STATE_DIM))
    for j in range(STATE_DIM):
        h = 1.0e-6 * max(1.0, abs(x0[j]))
        step = np.zeros(STATE_DIM)
        step[j] = h
        A[:, j] = (derivative(x0 + step, u0, params, convention) - derivative(x0 - step, u0, params, convention)) / (
            2.0 * h
        )

    B = np.empty((STATE_DIM, INPUT_DIM))
    for j in range(INPUT_DIM):
        h = 1.0e-6 * max(1.0, abs(u0[j]))
        step = np.zeros(INPUT_DIM)
        step[j] = h
        B[:, j] = (derivative(x0, u0 + step, params, convention) - derivative(x0, u0 - step, params, convention)) / (
            2.0 * h
        )

    return A, B


def riccati_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray) -> np.ndarray:
    """AᵀP + PA − PBR⁻¹BᵀP + Q"""
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def _relative_residual(A, B, Q, R, P) -> float:
    residual = np.linalg.norm(riccati_residual(A, B, Q, R, P))
    scale = max(1.0, np.linalg.norm(Q), np.linalg.norm(A.T @ P + P @ A))
    return float(residual / scale)


def solve_lqr(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    u_trim: np.ndarray | None = None,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> LqrGain:
    """
    Resolve a equação algébrica de Riccati contínua e devolve o ganho LQR.

    A solução inicial vem de scipy.linalg.solve_continuous_are e é refinada com
    iterações de Newton-Kleinman (uma equação de Lyapunov por iteração) até o
    resíduo relativo ser <= tol.

    Raises:
        ConfigurationError: Sem convergência ou malha fechada não estável.
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)

    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ConfigurationError(_('Riccati equation has no stabilizing solution: {error}').format(error=e)) from e

    residual = _relative_residual(A, B, Q, R, P)
    iterations = 0
    while residual > tol and iterations < max_iter:
        K = np.linalg.solve(R, B.T @ P)
        closed = A - B @ K
        P = scipy.linalg.solve_continuous_lyapunov(closed.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        residual = _relative_residual(A, B, Q, R, P)
        iterations += 1

    if not residual <= tol:
        raise ConfigurationError(
            _('Riccati solver did not converge: residual {residual:.3e} after {n} iterations').format(
                residual=residual, n=iterations
            )
        )

    K = np.linalg.solve(R, B.T @ P)
    eigenvalues = np.linalg.eigvals(A - B @ K)
    if not np.all(eigenvalues.real < 0):
        raise ConfigurationError(_('LQR closed loop is not Hurwitz'))

    logger.debug(
        _('LQR solved: residual {residual:.2e}, spectral abscissa {abscissa:.3f}, Newton steps {n}').format(
            residual=residual, abscissa=float(np.max(eigenvalues.real)), n=iterations
        )
    )
    trim = np.zeros(B.shape[1]) if u_trim is None else np.asarray(u_trim, dtype=float)
    return LqrGain(K=K, u_trim=trim, A=A, B=B, P=P, residual=residual, eigenvalues=eigenvalues)


def lqr_weights(
    B: np.ndarray, q_weight: float, r_weight: float, weighting: str = 'input-scaled'
) -> tuple[np.ndarray, np.ndarray]:
    """
    Matrizes de peso do LQR.

    'input-scaled': Q = q·I e R = r·diag(b_i²), com b_i = max|B[:, i]| (unidades normalizadas de cada entrada).
    'reference': Q = I e R = 0.1·I, sem escala; q e r são ignorados.
    """
    if weighting == 'reference':
        return REFERENCE_Q * np.eye(B.shape[0]), REFERENCE_R * np.eye(B.shape[1])
    if weighting != 'input-scaled':
        raise ConfigurationError(
            _("Unknown LQR weighting '{name}'. Expected one of: {names}").format(
                name=weighting, names=', '.join(LQR_WEIGHTINGS)
            )
        )
    if not (q_weight > 0 and r_weight > 0):
        raise ConfigurationError(_('LQR weights must be positive'))
    b = np.max(np.abs(B), axis=0)
    if np.any(b == 0):
        raise ConfigurationError(_('An input has no effect on the linearized dynamics'))
    return q_weight * np.eye(B.shape[0]), r_weight * np.diag(b**2)


@lru_cache(maxsize=16)
def design_lqr(
    params: QuadParams,
    convention: Convention,
    q_weight: float,
    r_weight: float,
    weighting: str = 'input-scaled',
) -> LqrGain:
    """Ganho LQR para a planta 'params' em torno do voo pairado (com cache por processo)."""
    A, B = linearize(params, convention)
    Q, R = lqr_weights(B, q_weight, r_weight, weighting)
    gain = solve_lqr(A, B, Q, R, u_trim=params.hover_wrench)
    logger.info(
        _('LQR gain designed ({convention}, {weighting}): spectral abscissa {abscissa:.3f} 1/s').format(
            convention=str(convention), weighting=weighting, abscissa=gain.spectral_abscissa
        )
    )
    return gain


def lqr_control(gain: LqrGain, x: np.ndarray) -> np.ndarray:
    """u = u_trim − K·x (sem saturação). Aceita lotes (..., 12)."""
    return gain.u_trim - np.asarray(x, dtype=float) @ gain.K.T


def _actuated_axes(gain: LqrGain) -> tuple[np.ndarray, float]:
    """Eixos de posição cuja aceleração linearizada depende de u, e o maior ganho |∂p̈/∂u|."""
    G = np.abs(gain.A[0:3, :] @ gain.B)
    scale = float(np.max(G))
    if scale == 0.0:
        return np.zeros(3, dtype=bool), 0.0
    return np.max(G, axis=1) > ACTUATED_TOL * scale, scale


def cbf_constraint(spec: SafetySpec, gain: LqrGain, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Restrição linear a·u >= b da barreira de segunda ordem
    ḧ + 2α·ḣ + α²·h >= 0 sobre o modelo linearizado ẋ = A·x + B·(u − u_trim).

    Em ḧ só entram as acelerações dos eixos atuados: a aceleração horizontal
    vem da atitude, não de u, e fica fora da restrição.

    Returns:
        tuple[np.ndarray, np.ndarray]: a (..., 4) e b (...,).
    """
    x = np.asarray(x, dtype=float)
    alpha = spec.cbf_alpha
    A_pos = gain.A[0:3, :]
    actuated, _scale = _actuated_axes(gain)
    e = x[..., 0:3] - np.asarray(spec.center)
    drift = x @ gain.A.T
    p_dot = drift[..., 0:3]
    e_act = np.where(actuated, e, 0.0)

    h = spec.radius**2 - np.sum(e * e, axis=-1)
    h_dot = -2.0 * np.sum(e * p_dot, axis=-1)
    a = -2.0 * e_act @ (A_pos @ gain.B)
    c0 = -2.0 * np.sum(p_dot * p_dot, axis=-1) - 2.0 * np.sum(e_act * (drift @ A_pos.T), axis=-1)
    b = a @ gain.u_trim - c0 - 2.0 * alpha * h_dot - alpha**2 * h
    return a, b


def _saturate(wrench: np.ndarray, spec: SafetySpec, params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    """Limita cada motor a [0, max_thrust_ratio·Ω²_hover] e devolve (comando, limitado?)."""
    speeds = unmix(wrench, params, clamp=False).command
    upper = spec.max_thrust_ratio * params.hover_speed_sq
    bounded = np.clip(speeds, 0.0, upper)
    return mix(bounded, params), np.any(bounded != speeds, axis=-1)


def cbf_qp_control(
    spec: SafetySpec, gain: LqrGain, x: np.ndarray, params: QuadParams | None = None
) -> FilteredInput:
    """
    Filtro de segurança: minimiza ‖u − u_lqr‖² sujeito a a·u >= b.
    Com uma só restrição a solução é a projeção u_lqr + λ·aᵀ, λ = (b − a·u_lqr)/(a·aᵀ).

    Se ‖a‖ < CBF_MIN_GAIN·2·raio·max|∂p̈/∂u| com a restrição violada, a entrada quase não
    atua sobre a barreira: devolve u_lqr e sinaliza 'degenerate'. Com 'params', a projeção
    ativa é limitada à gama dos motores e sinalizada em 'saturated'.
    """
    x = np.asarray(x, dtype=float)
    u_lqr = lqr_control(gain, x)
    a, b = cbf_constraint(spec, gain, x)
    _actuated, scale = _actuated_axes(gain)
    min_norm = CBF_MIN_GAIN * 2.0 * spec.radius * scale

    slack = np.sum(a * u_lqr, axis=-1) - b
    norm_sq = np.sum(a * a, axis=-1)
    violated = slack < 0.0
    degenerate = violated & ((norm_sq == 0.0) | (norm_sq < min_norm**2))
    active = violated & ~degenerate

    with np.errstate(divide='ignore', invalid='ignore'):
        lam = np.where(active, -slack / np.where(active, norm_sq, 1.0), 0.0)
    wrench = np.where(np.asarray(active)[..., None], u_lqr + lam[..., None] * a, u_lqr)

    saturated = np.zeros_like(active)
    if params is not None and np.any(active):
        bounded, clipped = _saturate(wrench, spec, params)
        saturated = active & clipped
        wrench = np.where(np.asarray(saturated)[..., None], bounded, wrench)

    if np.ndim(active) == 0:
        return FilteredInput(wrench, bool(active), bool(degenerate), bool(saturated))
    return FilteredInput(wrench, active, degenerate, saturated)


@dataclass(frozen=True, eq=False)
class LqrController:
    gain: LqrGain

    def __call__(self, step: int, x: np.ndarray) -> np.ndarray:
        return lqr_control(self.gain, x)


@dataclass(frozen=True, eq=False)
class CbfQpController:
    spec: SafetySpec
    gain: LqrGain
    params: QuadParams | None = None

    def __call__(self, step: int, x: np.ndarray) -> np.ndarray:
        return cbf_qp_control(self.spec, self.gain, x, self.params).wrench


def build_controller(
    kind: str,
    params: QuadParams,
    convention: Convention,
    q_weight: float = 1.0,
    r_weight: float = 1.0e-3,
    safety: SafetySpec | None = None,
    weighting: str = 'input-scaled',
) -> Controller:
    """
    Cria o controlador pedido ('lqr' ou 'cbf-qp') para a planta 'params'.
    """
    gain = design_lqr(params, Convention(convention), float(q_weight), float(r_weight), weighting)
    if kind == 'lqr':
        return LqrController(gain)
    if kind == 'cbf-qp':
        return CbfQpController(safety or SafetySpec(), gain, params)
    raise ConfigurationError(
        _("Unknown controller '{kind}'. Expected one of: {kinds}").format(kind=kind, kinds=', '.join(CONTROLLER_KINDS))
    )


def sample_initial_states(
    rng: np.random.Generator,
    n: int,
    radius: float = 0.5,
    max_angle: float = 0.2,
    max_rate: float = 0.2,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> np.ndarray:
    """
    Amostra n estados iniciais: posição uniforme na bola de raio 'radius',
    ângulos e taxas uniformes em ±max_angle / ±max_rate, velocidade nula.
    """
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    distance = radius * rng.random(n) ** (1.0 / 3.0)

    x0 = np.zeros((n, STATE_DIM))
    x0[:, 0:3] = np.asarray(center) + direction * distance[:, None]
    x0[:, 6:9] = rng.uniform(-max_angle, max_angle, size=(n, 3))
    x0[:, 9:12] = rng.uniform(-max_rate, max_rate, size=(n, 3))
    return x0
