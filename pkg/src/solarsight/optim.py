"""SGD with momentum and weight decay, plus the step-decay schedule."""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class SGD:
    """Momentum SGD: v <- m*v + g + wd*p; p <- p - lr*v.

    ``params`` is a name -> Tensor mapping; only entries with
    ``requires_grad`` are updated.  Velocity buffers mirror parameter shapes.
    """

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 0.01,
                 momentum: float = 0.9, weight_decay: float = 0.0005):
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise UsageError(f"parameter {name!r} has no gradient")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= self.learning_rate * v

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def step_decay_lr(base_lr: float, epoch: int, decay_every: int, decay_factor: float) -> float:
    """Learning rate divided by ``decay_factor`` every ``decay_every`` epochs."""
    if decay_every <= 0:
        return base_lr
    return base_lr / (decay_factor ** (epoch // decay_every))
