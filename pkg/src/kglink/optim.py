"""First-order optimizers over named numpy parameters.

Parameters are registered implicitly: state arrays are allocated on first
use of a name and must keep their shape afterwards. Updates happen in
place, single-threaded, so runs are reproducible.
"""

from __future__ import annotations

import numpy as np


class Adagrad:
    """Per-element learning-rate decay by accumulated squared gradients."""

    def __init__(self, learning_rate: float, eps: float = 1e-10):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.eps = eps
        self._accum: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        acc = self._accum.get(name)
        if acc is None:
            acc = self._accum[name] = np.zeros_like(param)
        acc += grad * grad
        param -= self.learning_rate * grad / (np.sqrt(acc) + self.eps)


class Adam:
    """Adam with bias correction; ``weight_decay`` adds an L2 term to the gradient."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0,1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        if self.weight_decay:
            grad = grad + self.weight_decay * param
        m = self._m.get(name)
        if m is None:
            m = self._m[name] = np.zeros_like(param)
            self._v[name] = np.zeros_like(param)
            self._t[name] = 0
        v = self._v[name]
        self._t[name] += 1
        t = self._t[name]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
