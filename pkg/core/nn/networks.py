import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
from scipy.special import expit

from core.config.i18n import _
from core.nn.features import FeatureSpec
from core.utils.exceptions import ConfigurationError, PoisonedRunError

logger = logging.getLogger(__name__)

N_OUTPUTS = 4

Gradients = dict[str, np.ndarray]


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1.0e-3
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(_('Learning rate must be >= 0, got {lr}').format(lr=self.learning_rate))
        if self.batch_size < 1:
            raise ConfigurationError(_('Batch size must be >= 1'))


def hinge_loss(pred: np.ndarray, labels: np.ndarray, epsilon: float, normalizer: int | None = None):
    """
    Perda [‖pred − label‖₂ − ε]₊ somada e dividida por 'normalizer' (por defeito, o tamanho do lote).
    No vértice (‖·‖ = ε) e em ‖·‖ = 0 usa-se o subgradiente 0.

    Returns:
        tuple[float, np.ndarray]: Perda e gradiente em relação a 'pred'.
    """
    normalizer = normalizer or pred.shape[0]
    diff = pred - labels
    norms = np.sqrt(np.sum(diff * diff, axis=-1))
    over = norms > epsilon
    loss = float(np.sum(np.where(over, norms - epsilon, 0.0)) / normalizer)
    safe = np.where(over, norms, 1.0)
    d_pred = np.where(over[:, None], diff / safe[:, None], 0.0) / normalizer
    return loss, d_pred


def loss_hinge(pred: np.ndarray, label: np.ndarray, epsilon: float) -> float:
    """Perda de uma única previsão."""
    return hinge_loss(np.atleast_2d(pred), np.atleast_2d(label), epsilon)[0]


def _uniform(rng: np.random.Generator, bound: float, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _dense_backward(
    grads: Gradients, params: dict[str, np.ndarray], name: str, x_in: np.ndarray, dz: np.ndarray
) -> np.ndarray:
    grads[f'{name}.W'] = x_in.T @ dz
    grads[f'{name}.b'] = dz.sum(axis=0)
    return dz @ params[f'{name}.W'].T


class FdiNetwork(ABC):
    """
    Classificador de falhas: janela (B, T, D) -> Θ previsto (B, 4) com saída sigmoide.
    Os parâmetros ficam num dicionário ordenado nome -> array.
    """

    arch: ClassVar[str]

    def __init__(self, spec: FeatureSpec, hidden: int, params: dict[str, np.ndarray]):
        self.spec = spec
        self.hidden = hidden
        self.params = params

    @classmethod
    @abstractmethod
    def initialize(cls, spec: FeatureSpec, hidden: int, rng: np.random.Generator) -> 'FdiNetwork': ...

    @classmethod
    @abstractmethod
    def parameter_shapes(cls, spec: FeatureSpec, hidden: int) -> dict[str, tuple[int, ...]]: ...

    @abstractmethod
    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, dict[str, Any]]: ...

    @abstractmethod
    def _backward(self, cache: dict[str, Any], d_pred: np.ndarray) -> Gradients: ...

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        expected = (self.spec.window, self.spec.step_width)
        if X.ndim != 3 or X.shape[1:] != expected:
            raise ValueError(
                _('Feature shape mismatch: got {got}, expected (B, {T}, {D})').format(
                    got=X.shape, T=expected[0], D=expected[1]
                )
            )
        return X

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Previsões em (0, 1)^4 para um lote (B, T, D) ou uma janela (T, D)."""
        return self._forward(self._check_input(X))[0]

    def backward(
        self, X: np.ndarray, labels: np.ndarray, epsilon: float, normalizer: int | None = None
    ) -> tuple[float, Gradients]:
        """
        Gradientes exatos da perda hinge (retropropagação completa, BPTT no LSTM).

        Raises:
            PoisonedRunError: Se a perda ou algum gradiente não for finito.
        """
        X = self._check_input(X)
        labels = np.atleast_2d(np.asarray(labels, dtype=float))
        with np.errstate(all='ignore'):
            pred, cache = self._forward(X)
            loss, d_pred = hinge_loss(pred, labels, epsilon, normalizer)
            grads = self._backward(cache, d_pred) if np.any(d_pred) else self.zero_gradients()

        poisoned = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if not np.isfinite(loss) or poisoned:
            raise PoisonedRunError(
                _('Non-finite loss or gradient detected'),
                diagnostics={'loss': loss, 'poisoned_parameters': poisoned, 'batch_size': int(X.shape[0])},
            )
        return loss, grads

    def zero_gradients(self) -> Gradients:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def copy(self) -> 'FdiNetwork':
        return type(self)(self.spec, self.hidden, {k: v.copy() for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # Cabeça densa comum: camadas tanh seguidas de uma saída sigmoide.
    def _head_forward(self, h: np.ndarray, layers: tuple[str, ...], cache: dict[str, Any]) -> np.ndarray:
        activations = [h]
        for name in layers[:-1]:
            h = np.tanh(h @ self.params[f'{name}.W'] + self.params[f'{name}.b'])
            activations.append(h)
        out = expit(h @ self.params[f'{layers[-1]}.W'] + self.params[f'{layers[-1]}.b'])
        cache['head'] = activations
        cache['out'] = out
        return out

    def _head_backward(self, cache: dict[str, Any], d_pred: np.ndarray, layers: tuple[str, ...], grads: Gradients):
        activations, out = cache['head'], cache['out']
        dz = d_pred * out * (1.0 - out)
        da = _dense_backward(grads, self.params, layers[-1], activations[-1], dz)
        for index in range(len(layers) - 2, -1, -1):
            a = activations[index + 1]
            dz = da * (1.0 - a * a)
            da = _dense_backward(grads, self.params, layers[index], activations[index], dz)
        return da


class MlpNetwork(FdiNetwork):
    """Perceptrão: N -> H -> H -> H -> H -> H/2 -> 4 (tanh nas camadas escondidas)."""

    arch = 'mlp'
    LAYERS = ('fc0', 'fc1', 'fc2', 'fc3', 'fc4', 'out')

    @classmethod
    def parameter_shapes(cls, spec: FeatureSpec, hidden: int) -> dict[str, tuple[int, ...]]:
        sizes = [spec.flat_width, hidden, hidden, hidden, hidden, hidden // 2, N_OUTPUTS]
        shapes: dict[str, tuple[int, ...]] = {}
        for name, fan_in, fan_out in zip(cls.LAYERS, sizes[:-1], sizes[1:], strict=True):
            shapes[f'{name}.W'] = (fan_in, fan_out)
            shapes[f'{name}.b'] = (fan_out,)
        return shapes

    @classmethod
    def initialize(cls, spec: FeatureSpec, hidden: int, rng: np.random.Generator) -> 'MlpNetwork':
        params = {}
        for name, shape in cls.parameter_shapes(spec, hidden).items():
            fan_in = shape[0] if name.endswith('.W') else params[name.replace('.b', '.W')].shape[0]
            params[name] = _uniform(rng, 1.0 / np.sqrt(fan_in), shape)
        return cls(spec, hidden, params)

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, dict[str, Any]]:
        cache: dict[str, Any] = {}
        flat = X.reshape(X.shape[0], -1)
        return self._head_forward(flat, self.LAYERS, cache), cache

    def _backward(self, cache: dict[str, Any], d_pred: np.ndarray) -> Gradients:
        grads: Gradients = {}
        self._head_backward(cache, d_pred, self.LAYERS, grads)
        return {name: grads[name] for name in self.params}


class LstmNetwork(FdiNetwork):
    """
    Uma camada LSTM (portas i, f, g, o; estado inicial nulo) seguida da cabeça
    H -> H -> H/2 -> 4 aplicada ao estado escondido do último passo.
    """

    arch = 'lstm'
    HEAD = ('fc0', 'fc1', 'out')

    @classmethod
    def parameter_shapes(cls, spec: FeatureSpec, hidden: int) -> dict[str, tuple[int, ...]]:
        return {
            'lstm.Wx': (spec.step_width, 4 * hidden),
            'lstm.Wh': (hidden, 4 * hidden),
            'lstm.b': (4 * hidden,),
            'fc0.W': (hidden, hidden),
            'fc0.b': (hidden,),
            'fc1.W': (hidden, hidden // 2),
            'fc1.b': (hidden // 2,),
            'out.W': (hidden // 2, N_OUTPUTS),
            'out.b': (N_OUTPUTS,),
        }

    @classmethod
    def initialize(cls, spec: FeatureSpec, hidden: int, rng: np.random.Generator) -> 'LstmNetwork':
        fan_in = {'lstm.Wx': spec.step_width, 'lstm': hidden, 'fc0': hidden, 'fc1': hidden, 'out': hidden // 2}
        params = {
            name: _uniform(rng, 1.0 / np.sqrt(fan_in.get(name, fan_in[name.split('.')[0]])), shape)
            for name, shape in cls.parameter_shapes(spec, hidden).items()
        }
        return cls(spec, hidden, params)

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, dict[str, Any]]:
        n_batch, n_steps, _width = X.shape
        H = self.hidden
        Wh = self.params['lstm.Wh']
        x_proj = (X.reshape(n_batch * n_steps, -1) @ self.params['lstm.Wx']).reshape(n_batch, n_steps, 4 * H)
        x_proj += self.params['lstm.b']

        gates = np.empty((n_batch, n_steps, 4 * H))
        cells = np.empty((n_batch, n_steps + 1, H))
        hiddens = np.empty((n_batch, n_steps + 1, H))
        cells[:, 0] = 0.0
        hiddens[:, 0] = 0.0

        for t in range(n_steps):
            z = x_proj[:, t] + hiddens[:, t] @ Wh
            gate = gates[:, t]
            gate[:, : 2 * H] = expit(z[:, : 2 * H])
            gate[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            gate[:, 3 * H :] = expit(z[:, 3 * H :])
            cells[:, t + 1] = gate[:, H : 2 * H] * cells[:, t] + gate[:, :H] * gate[:, 2 * H : 3 * H]
            hiddens[:, t + 1] = gate[:, 3 * H :] * np.tanh(cells[:, t + 1])

        cache: dict[str, Any] = {'X': X, 'gates': gates, 'cells': cells, 'hiddens': hiddens}
        return self._head_forward(hiddens[:, -1], self.HEAD, cache), cache

    def _backward(self, cache: dict[str, Any], d_pred: np.ndarray) -> Gradients:
        grads: Gradients = {}
        dh = self._head_backward(cache, d_pred, self.HEAD, grads)

        X, gates, cells, hiddens = cache['X'], cache['gates'], cache['cells'], cache['hiddens']
        H = self.hidden
        Wh = self.params['lstm.Wh']
        n_steps = X.shape[1]

        d_gates = np.empty_like(gates)
        dc = np.zeros_like(dh)
        for t in range(n_steps - 1, -1, -1):
            gate = gates[:, t]
            i, f, g, o = gate[:, :H], gate[:, H : 2 * H], gate[:, 2 * H : 3 * H], gate[:, 3 * H :]
            tanh_c = np.tanh(cells[:, t + 1])
            dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
            dz = d_gates[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * cells[:, t] * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
            dc = dc * f
            dh = dz @ Wh.T

        flat_dz = d_gates.reshape(-1, 4 * H)
        grads['lstm.Wx'] = X.reshape(-1, X.shape[2]).T @ flat_dz
        grads['lstm.Wh'] = hiddens[:, :-1].reshape(-1, H).T @ flat_dz
        grads['lstm.b'] = flat_dz.sum(axis=0)
        return {name: grads[name] for name in self.params}


ARCHITECTURES: dict[str, type[FdiNetwork]] = {'mlp': MlpNetwork, 'lstm': LstmNetwork}


def build_network(arch: str, spec: FeatureSpec, hidden: int, rng: np.random.Generator) -> FdiNetwork:
    if arch not in ARCHITECTURES:
        raise ConfigurationError(
            _("Unknown architecture '{arch}'. Expected one of: {archs}").format(
                arch=arch, archs=', '.join(ARCHITECTURES)
            )
        )
    if hidden < 2:
        raise ConfigurationError(_('Hidden width must be >= 2, got {hidden}').format(hidden=hidden))
    network = ARCHITECTURES[arch].initialize(spec, hidden, rng)
    logger.info(
        _('Built {arch} network: hidden {hidden}, {n} parameters, features {mode}').format(
            arch=arch, hidden=hidden, n=network.n_parameters(), mode=str(spec.mode)
        )
    )
    return network


def sgd_step(net: FdiNetwork, gradients: Gradients, cfg: SgdConfig) -> FdiNetwork:
    """w <- w − lr·g, no próprio objeto (devolvido por conveniência)."""
    if cfg.learning_rate == 0:
        return net
    for name, value in net.params.items():
        value -= cfg.learning_rate * gradients[name]
    return net
