"""SGD with Nesterov momentum."""
from __future__ import annotations

import numpy as np

from .tensor import NumericError, Tensor


def sgd_nesterov_step(theta: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float,
                      mu: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g.  Returns new (theta, v)."""
    v = mu * velocity - lr * grad
    return theta + mu * v - lr * grad, v


class NesterovSGD:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            theta, v = sgd_nesterov_step(p.data, g, self.velocity[name], self.lr, self.momentum)
            if not np.all(np.isfinite(theta)):
                raise NumericError(f"non-finite values in {name} after optimizer step")
            p.data[...] = theta
            self.velocity[name] = v.astype(p.dtype, copy=False)
