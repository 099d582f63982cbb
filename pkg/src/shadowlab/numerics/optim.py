"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class MissingGradError(RuntimeError):
    """Raised when step() finds a parameter without a gradient."""


class Adam:
    """Adam with bias correction.

    Args:
        params: name -> Tensor mapping; names are used in error messages.
        lr: learning rate.
        betas: exponential decay rates for the first and second moments.
        eps: denominator stabilizer.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradError(f"parameter '{name}' has no gradient; call zero_grad and backward first")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
