from dataclasses import asdict, dataclass
from enum import StrEnum
from typing import Any

import numpy as np

from core.config.i18n import _
from core.physics.quadrotor import INPUT_DIM, OUTPUT_DIM, QuadParams
from core.utils.exceptions import ConfigurationError


class FeatureMode(StrEnum):
    MODEL_FREE = 'model-free'
    MODEL_BASED = 'model-based'
    RESIDUAL_ONLY = 'residual-only'


@dataclass(frozen=True)
class FeatureSpec:
    """
    Descreve as características de entrada da rede.

    Canais por passo, por esta ordem: saída y (p), comando u (m) e resíduo ỹ (p).
    model-free usa (y, u), model-based usa (y, u, ỹ) e residual-only usa só ỹ.
    As constantes de escala normalizam u em torno do voo pairado e ỹ pela
    ordem de grandeza g·dt² de um passo de amostragem.
    """

    mode: FeatureMode = FeatureMode.MODEL_FREE
    p: int = OUTPUT_DIM
    m: int = INPUT_DIM
    window: int = 100
    u_offset: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    u_scale: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    residual_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'mode', FeatureMode(self.mode))
        object.__setattr__(self, 'u_offset', tuple(float(v) for v in self.u_offset))
        object.__setattr__(self, 'u_scale', tuple(float(v) for v in self.u_scale))
        if self.window < 1:
            raise ConfigurationError(_('Window length must be >= 1, got {window}').format(window=self.window))
        if len(self.u_offset) != self.m or len(self.u_scale) != self.m:
            raise ConfigurationError(_('Input scaling needs {m} entries').format(m=self.m))
        if any(s <= 0 for s in self.u_scale) or self.residual_scale <= 0:
            raise ConfigurationError(_('Feature scales must be positive'))

    @classmethod
    def for_params(cls, mode: FeatureMode | str, window: int, params: QuadParams, dt: float) -> 'FeatureSpec':
        """Escalas derivadas dos parâmetros nominais: u_trim = (m·g, 0, 0, 0) e s_h = m·g/(4·CT)."""
        hover = params.hover_speed_sq
        moment = params.d * params.ct * np.sqrt(2.0) * hover
        return cls(
            mode=FeatureMode(mode),
            window=window,
            u_offset=(params.m * params.g, 0.0, 0.0, 0.0),
            u_scale=(params.m * params.g, moment, moment, params.cd * hover),
            residual_scale=1.0 / (params.g * dt * dt),
        )

    @property
    def uses_outputs(self) -> bool:
        return self.mode != FeatureMode.RESIDUAL_ONLY

    @property
    def uses_inputs(self) -> bool:
        return self.mode != FeatureMode.RESIDUAL_ONLY

    @property
    def uses_residuals(self) -> bool:
        return self.mode != FeatureMode.MODEL_FREE

    @property
    def step_width(self) -> int:
        if self.mode == FeatureMode.MODEL_FREE:
            return self.p + self.m
        if self.mode == FeatureMode.MODEL_BASED:
            return 2 * self.p + self.m
        return self.p

    @property
    def flat_width(self) -> int:
        return self.step_width * self.window

    def compatible_with(self, other: 'FeatureSpec') -> bool:
        return (self.mode, self.p, self.m, self.window) == (other.mode, other.p, other.m, other.window)

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data['mode'] = str(self.mode)
        data['u_offset'] = list(self.u_offset)
        data['u_scale'] = list(self.u_scale)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'FeatureSpec':
        return cls(**data)

    def build(self, y_seq: np.ndarray, u_seq: np.ndarray, resid_seq: np.ndarray | None = None) -> np.ndarray:
        """
        Junta os canais de uma ou mais janelas numa matriz (..., T, largura).

        Args:
            y_seq (np.ndarray): Saídas, forma (..., T, p).
            u_seq (np.ndarray): Comandos, forma (..., T, m).
            resid_seq (np.ndarray | None): Resíduos, forma (..., T, p). Obrigatório se o modo os usar.
        Returns:
            np.ndarray: Características normalizadas.
        """
        if y_seq.shape[-2] != self.window:
            raise ValueError(
                _('Window has {got} samples, expected {expected}').format(got=y_seq.shape[-2], expected=self.window)
            )
        channels = []
        if self.uses_outputs:
            channels.append(np.asarray(y_seq, dtype=float))
        if self.uses_inputs:
            channels.append((np.asarray(u_seq, dtype=float) - np.asarray(self.u_offset)) / np.asarray(self.u_scale))
        if self.uses_residuals:
            if resid_seq is None:
                raise ValueError(_("Feature mode '{mode}' needs residuals").format(mode=str(self.mode)))
            channels.append(np.asarray(resid_seq, dtype=float) * self.residual_scale)
        return np.concatenate(channels, axis=-1) if len(channels) > 1 else channels[0]
