from __future__ import annotations

import numpy as np

from .layers import Parameter


class RMSProp:
    """Per-parameter scaled gradient descent without a momentum term.

    Frozen parameters (``trainable=False``) and parameters without a gradient
    are skipped.
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-3, decay: float = 0.99,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, sq in zip(self.params, self.sq):
            if not p.trainable or p.grad is None:
                continue
            sq *= self.decay
            sq += (1.0 - self.decay) * p.grad * p.grad
            p.data = p.data - self.lr * p.grad / (np.sqrt(sq) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
