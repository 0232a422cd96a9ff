"""
Gradient-descent optimizers over ``Tensor`` parameters.

Each optimizer owns exactly the parameters it was constructed with; a
parameter whose ``grad`` is ``None`` at ``step()`` is left untouched (including
its moment estimates), which is what keeps hard-sampled, unselected block
options and the architecture weights isolated from the wrong optimizer.
"""

import logging
from collections.abc import Iterable
from typing import Any

import numpy as np

from .errors import ParameterError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Optimizer:
    def __init__(self, params: Iterable[Tensor], lr: float):
        if not lr > 0:
            raise ParameterError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        for i, p in enumerate(self.params):
            if p.grad is not None:
                self._update(i, p)

    def _update(self, index: int, param: Tensor) -> None:
        raise NotImplementedError

    def _buffers(self) -> dict[str, dict[int, Any]]:
        return {}

    def state_dict(self) -> dict[str, np.ndarray]:
        """Flat arrays keyed ``"<buffer>.<param index>"`` plus the step count."""
        state = {"step_count": np.asarray(self.step_count)}
        for name, buffer in self._buffers().items():
            for index, value in buffer.items():
                state[f"{name}.{index}"] = np.asarray(value).copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state.get("step_count", 0))
        buffers = self._buffers()
        for buffer in buffers.values():
            buffer.clear()
        for key, value in state.items():
            name, _, index = key.rpartition(".")
            if name in buffers:
                restored = np.array(value, copy=True)
                buffers[name][int(index)] = int(restored) if restored.ndim == 0 else restored


class SGD(Optimizer):
    def __init__(self, params: Iterable[Tensor], lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self._velocity: dict[int, np.ndarray] = {}

    def _buffers(self) -> dict[str, dict[int, Any]]:
        return {"velocity": self._velocity}

    def _update(self, index: int, param: Tensor) -> None:
        update = param.grad
        if self.momentum:
            v = self._velocity.get(index)
            v = update.copy() if v is None else self.momentum * v + update
            self._velocity[index] = v
            update = v
        param.data -= self.lr * update


class Adam(Optimizer):
    """Adam with bias correction; per-parameter step counts so skipped steps don't skew it."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def _buffers(self) -> dict[str, dict[int, Any]]:
        return {"m": self._m, "v": self._v, "t": self._t}

    def _moments(self, index: int, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        beta1, beta2 = self.betas
        m = self._m.get(index)
        v = self._v.get(index)
        m = (1 - beta1) * grad if m is None else beta1 * m + (1 - beta1) * grad
        v = (1 - beta2) * grad * grad if v is None else beta2 * v + (1 - beta2) * grad * grad
        self._m[index], self._v[index] = m, v
        t = self._t.get(index, 0) + 1
        self._t[index] = t
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        return m_hat, v_hat

    def _update(self, index: int, param: Tensor) -> None:
        m_hat, v_hat = self._moments(index, param.grad)
        update = m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            update = update + self.weight_decay * param.data
        param.data -= self.lr * update


class Lamb(Adam):
    """Layer-wise adaptive moments: Adam's direction scaled by ||w|| / ||update||."""

    def _update(self, index: int, param: Tensor) -> None:
        m_hat, v_hat = self._moments(index, param.grad)
        update = m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            update = update + self.weight_decay * param.data
        weight_norm = float(np.linalg.norm(param.data))
        update_norm = float(np.linalg.norm(update))
        trust = weight_norm / update_norm if weight_norm > 0 and update_norm > 0 else 1.0
        param.data -= self.lr * trust * update


OPTIMIZERS: dict[str, type[Optimizer]] = {"sgd": SGD, "adam": Adam, "lamb": Lamb}


def create_optimizer(kind: str, params: Iterable[Tensor], lr: float, **kwargs) -> Optimizer:
    """Build an optimizer by name (``sgd``, ``adam``, ``lamb``)."""
    try:
        cls = OPTIMIZERS[kind.lower()]
    except KeyError:
        raise ParameterError(
            f"unknown optimizer '{kind}'; expected one of {sorted(OPTIMIZERS)}"
        ) from None
    return cls(params, lr=lr, **kwargs)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
