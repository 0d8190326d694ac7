import dataclasses
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Literal

import numpy as np
import pandas as pd

from core.config.i18n import _
from core.config.settings import NOMINAL_PARAMS
from core.physics.control import design_lqr, lqr_control, sample_initial_states
from core.physics.quadrotor import (
    N_MOTORS,
    Convention,
    QuadParams,
    SimConfig,
    mix,
    mixing_matrix,
    simulate_batch,
    unmix,
)
from core.utils.exceptions import ConfigurationError
from core.utils.utils import make_rng

logger = logging.getLogger(__name__)

# Caso n -> ângulo de guinada. O caso 2 é a configuração de treino (identidade).
CASE_ANGLES: dict[int, float] = {1: 1.5 * np.pi, 2: 0.0, 3: 0.5 * np.pi, 4: np.pi}
CASE_ORDER: tuple[int, ...] = (1, 2, 3, 4)
TRAINED_ROLE = 2

_QUARTER_TURNS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def rotation_matrix(theta: float) -> np.ndarray:
    """
    R_θ = [[cos θ, sin θ, 0], [−sin θ, cos θ, 0], [0, 0, 1]].
    Múltiplos de π/2 usam valores exatos (0, ±1).
    """
    quarter = theta / (0.5 * np.pi)
    k = round(quarter)
    if abs(quarter - k) < 1.0e-12:
        c, s = _QUARTER_TURNS[k % 4]
    else:
        c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RotationCase:
    """
    Um dos quatro casos de rotação. 'motor_map[j-1]' é o papel que o motor físico j
    desempenha neste caso; 'yaw_sign' é o sinal com que o momento de guinada U4 é
    transportado pela permutação dos motores.
    """

    n: int
    theta: float
    motor_map: tuple[int, int, int, int]
    yaw_sign: int
    matrix: np.ndarray
    permutation: np.ndarray
    wrench_transform: np.ndarray

    @property
    def is_identity(self) -> bool:
        return self.n == TRAINED_ROLE

    def role_of(self, motor: int) -> int:
        return self.motor_map[motor - 1]

    def motor_for_role(self, role: int) -> int:
        return self.motor_map.index(role) + 1

    def __repr__(self) -> str:
        return f'RotationCase(n={self.n}, theta={self.theta:.4f}, motor_map={self.motor_map}, yaw_sign={self.yaw_sign})'


def _wrench_transform(rotation: np.ndarray, yaw_sign: int) -> np.ndarray:
    transform = np.zeros((4, 4))
    transform[0, 0] = 1.0
    transform[1:3, 1:3] = rotation[0:2, 0:2]
    transform[3, 3] = float(yaw_sign)
    return transform


def solve_motor_map(theta: float, params: QuadParams) -> tuple[tuple[int, int, int, int], int]:
    """
    Procura a permutação de motores P e o sinal de guinada σ tais que
    M·P = T·M, com T = diag(1, R_θ[0:2, 0:2], σ) e M a matriz de mistura.
    Convenção: P[ρ(j), j] = 1, isto é, o motor j desempenha o papel ρ(j).

    Returns:
        tuple: (mapa motor -> papel, com índices 1..4; σ).
    Raises:
        ConfigurationError: Se não existir exatamente uma solução.
    """
    matrix = mixing_matrix(params)
    row_scale = np.max(np.abs(matrix), axis=1, keepdims=True)
    normalized = matrix / row_scale
    rotation = rotation_matrix(theta)

    solutions = []
    for roles in itertools.permutations(range(N_MOTORS)):
        permutation = np.zeros((N_MOTORS, N_MOTORS))
        permutation[list(roles), list(range(N_MOTORS))] = 1.0
        for yaw_sign in (1, -1):
            lhs = normalized @ permutation
            rhs = _wrench_transform(rotation, yaw_sign) @ normalized
            if np.allclose(lhs, rhs, rtol=0.0, atol=1.0e-12):
                solutions.append((tuple(r + 1 for r in roles), yaw_sign))

    if len(solutions) != 1:
        raise ConfigurationError(
            _('Motor permutation for theta={theta:.4f} is not unique: {count} solutions').format(
                theta=theta, count=len(solutions)
            )
        )
    return solutions[0]


def _permutation_matrix(motor_map: tuple[int, ...]) -> np.ndarray:
    permutation = np.zeros((N_MOTORS, N_MOTORS))
    for motor, role in enumerate(motor_map):
        permutation[role - 1, motor] = 1.0
    return permutation


def make_case(n: int, params: QuadParams) -> RotationCase:
    if n not in CASE_ANGLES:
        raise ConfigurationError(_('Rotation case must be in 1..4, got {n}').format(n=n))
    theta = CASE_ANGLES[n]
    motor_map, yaw_sign = solve_motor_map(theta, params)
    rotation = rotation_matrix(theta)
    rotation.setflags(write=False)
    return RotationCase(
        n=n,
        theta=theta,
        motor_map=motor_map,
        yaw_sign=yaw_sign,
        matrix=rotation,
        permutation=_permutation_matrix(motor_map),
        wrench_transform=_wrench_transform(rotation, yaw_sign),
    )


@lru_cache(maxsize=8)
def rotation_cases(params: QuadParams | None = None) -> tuple[RotationCase, ...]:
    """Os quatro casos, pela ordem n = 1..4. Resolvidos uma vez por processo."""
    params = params or QuadParams.from_mapping(NOMINAL_PARAMS)
    cases = tuple(make_case(n, params) for n in CASE_ORDER)
    roles = {case.motor_for_role(TRAINED_ROLE) for case in cases}
    if roles != set(range(1, N_MOTORS + 1)):
        raise ConfigurationError(_('Rotation cases do not cover every motor'))
    logger.debug(_('Rotation cases solved: {cases}').format(cases=cases))
    return cases


def get_case(n: int) -> RotationCase:
    return rotation_cases()[CASE_ORDER.index(n)]


def case_for_motor(motor: int) -> RotationCase:
    """Devolve o caso em que o motor físico 'motor' desempenha o papel do motor #2."""
    if motor not in range(1, N_MOTORS + 1):
        raise ConfigurationError(_('Motor index must be in 1..4, got {motor}').format(motor=motor))
    for case in rotation_cases():
        if case.role_of(motor) == TRAINED_ROLE:
            return case
    raise ConfigurationError(_('No rotation case maps motor {motor} to role 2').format(motor=motor))


def _case_for_angle(theta: float) -> RotationCase:
    angle = theta % (2.0 * np.pi)
    for case in rotation_cases():
        if np.isclose(np.cos(case.theta - angle), 1.0, atol=1.0e-12):
            return case
    raise ConfigurationError(_('Angle {theta} is not a quarter turn').format(theta=theta))


def _compose(first: RotationCase, second: RotationCase) -> RotationCase:
    """Caso equivalente a aplicar 'first' e depois 'second'."""
    return _case_for_angle(first.theta + second.theta)


def _inverse_case(case: RotationCase) -> RotationCase:
    return _case_for_angle(-case.theta)


def _rotate_blocks(values: np.ndarray, rotation: np.ndarray, n_blocks: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    blocks = values.reshape(*values.shape[:-1], n_blocks, 3)
    return (blocks @ rotation.T).reshape(values.shape)


def rotate_state(x: np.ndarray, case: RotationCase) -> np.ndarray:
    """Aplica R_θ a cada um dos quatro blocos de 3 do estado (aceita lotes)."""
    return _rotate_blocks(x, case.matrix, 4)


def rotate_output(y: np.ndarray, case: RotationCase) -> np.ndarray:
    """Aplica R_θ aos blocos de posição e de ângulos de Euler da saída."""
    return _rotate_blocks(y, case.matrix, 2)


def permute_input(
    u: np.ndarray, case: RotationCase, params: QuadParams, kind: Literal['wrench', 'motor'] = 'wrench'
) -> np.ndarray:
    """
    Transporta uma entrada para o referencial do caso. Comandos de motor são
    permutados; forças/momentos são desmisturados (sem limitação), permutados e
    misturados de novo.
    """
    u = np.asarray(u, dtype=float)
    if kind == 'motor':
        return u @ case.permutation.T
    if kind != 'wrench':
        raise ValueError(_("Input kind must be 'wrench' or 'motor', got '{kind}'").format(kind=kind))
    command = unmix(u, params, clamp=False).command
    return mix(command @ case.permutation.T, params)


def canonicalize_arrays(
    y: np.ndarray, u: np.ndarray, resid: np.ndarray | None, case: RotationCase, params: QuadParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Versão sobre arrays (..., T, 6) / (..., T, 4), usada em lote na avaliação."""
    if case.is_identity:
        return y, u, resid
    y_rot = rotate_output(y, case)
    u_rot = permute_input(u, case, params)
    resid_rot = None if resid is None else rotate_output(resid, case)
    return y_rot, u_rot, resid_rot


def canonicalize_window(win: Any, case: RotationCase, params: QuadParams) -> Any:
    """
    Devolve uma cópia da janela com as saídas rodadas, as entradas permutadas
    e os resíduos (se existirem) rodados.
    """
    y, u, resid = canonicalize_arrays(win.y_seq, win.u_seq, win.resid_seq, case, params)
    return dataclasses.replace(win, y_seq=y, u_seq=u, resid_seq=resid)


def equivariance_gap(
    case: RotationCase,
    convention: Convention,
    params: QuadParams,
    steps: int = 50,
    level: float = 0.5,
    motor: int = TRAINED_ROLE,
    n_states: int = 4,
    seed: int = 0,
) -> float:
    """
    Simulação emparelhada: simular e rodar vs. rodar e simular com o índice de falha permutado.
    Usa o LQR da própria convenção e estados iniciais próximos do voo pairado.

    Returns:
        float: Maior diferença absoluta entre os estados das duas simulações.
    """
    gain = design_lqr(params, Convention(convention), 1.0, 1.0e-3)
    cfg = SimConfig(dt=0.01, horizon=steps, convention=convention)
    x0 = sample_initial_states(make_rng(seed, 'equivariance', case.n), n_states, 0.1, 0.05, 0.05)

    fault = np.ones(N_MOTORS)
    fault[motor - 1] = level

    def controller(_step: int, x: np.ndarray) -> np.ndarray:
        return lqr_control(gain, x)

    original = simulate_batch(x0, controller, fault, 0, cfg, params)
    rotated = simulate_batch(rotate_state(x0, case), controller, fault @ case.permutation.T, 0, cfg, params)

    if not (original.valid.all() and rotated.valid.all()):
        return float('inf')
    return float(np.max(np.abs(rotate_state(original.states, case) - rotated.states)))


def equivariance_report(params: QuadParams, steps: int = 50, seed: int = 0) -> pd.DataFrame:
    """Tabela convenção × caso com o mapa de motores, o sinal de guinada e o desvio medido."""
    rows = []
    for convention in Convention:
        for case in rotation_cases(params):
            gap = equivariance_gap(case, convention, params, steps=steps, seed=seed)
            rows.append({
                'convention': str(convention),
                'case': case.n,
                'theta': case.theta,
                'motor_map': '-'.join(str(r) for r in case.motor_map),
                'motor_as_role_2': case.motor_for_role(TRAINED_ROLE),
                'yaw_sign': case.yaw_sign,
                'max_gap': gap,
            })
            logger.info(
                _('Equivariance gap ({convention}, case {n}): {gap:.3e}').format(
                    convention=str(convention), n=case.n, gap=gap
                )
            )
    return pd.DataFrame(rows)
