# Standard library
import math
import logging
from collections.abc import Mapping

# Third party
import numpy as np

# Local
try:
    from causalpima.tensor import Tensor
    from causalpima.errors import ConfigurationError, ContractViolation
except ImportError:
    from tensor import Tensor
    from errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)


#########
# HELPERS
#########


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Rescales every gradient by the same factor so the joint norm is at most
    `max_norm`. Returns the clipped gradients and the norm before clipping."""

    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm

    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


######
# MAIN
######


class Optimizer:
    """Updates named leaf tensors in place by rebinding `.data`. State is keyed
    by parameter name so it survives checkpointing and rebuilt tensors."""

    kind = "base"

    def __init__(self, learning_rate: float):
        if learning_rate < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {learning_rate}")

        self.learning_rate = learning_rate

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]):
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue

            if grad.shape != param.shape:
                raise ContractViolation(
                    f"gradient for {name} has shape {grad.shape}, parameter has {param.shape}"
                )

            param.data = param.data - self.update(name, grad)

    def update(self, name: str, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        pass


class SGD(Optimizer):
    kind = "sgd"

    def update(self, name: str, grad: np.ndarray) -> np.ndarray:
        return self.learning_rate * grad


class Adam(Optimizer):
    """Adam with per-parameter step counts, so parameters updated in extra
    steps get their own bias correction."""

    kind = "adam"

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def update(self, name: str, grad: np.ndarray) -> np.ndarray:
        m = self.m.get(name, np.zeros_like(grad))
        v = self.v.get(name, np.zeros_like(grad))
        t = self.t.get(name, 0) + 1

        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.m[name], self.v[name], self.t[name] = m, v, t

        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name in self.m:
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
            state[f"t/{name}"] = np.array(self.t[name], dtype=np.int64)

        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        self.m, self.v, self.t = {}, {}, {}
        for key, value in state.items():
            slot, _, name = key.partition("/")
            if slot == "m":
                self.m[name] = np.asarray(value, dtype=np.float64)
            elif slot == "v":
                self.v[name] = np.asarray(value, dtype=np.float64)
            elif slot == "t":
                self.t[name] = int(value)
            else:
                raise ContractViolation(f"unknown optimizer state entry {key!r}")


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


def make_optimizer(kind: str, learning_rate: float) -> Optimizer:
    if kind not in OPTIMIZERS:
        raise ConfigurationError(f"unknown optimizer {kind!r}")

    return OPTIMIZERS[kind](learning_rate)
