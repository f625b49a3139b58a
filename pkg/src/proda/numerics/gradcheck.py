"""Central-difference gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tensor
from .layers import Module


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


@dataclass
class GradReport:
    eps: float
    tol: float
    entries: list[tuple[str, float]] = field(default_factory=list)  # worst first

    @property
    def max_rel_err(self) -> float:
        return max((e for _, e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}, max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tol:.0e}, eps {self.eps:.0e}, {len(self.entries)} parameters)")


def grad_check(loss_fn: Callable[[], Tensor], module: Module, eps: float = 1e-5,
               tol: float = 1e-5) -> GradReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    Every trainable scalar of ``module`` is perturbed by +/- ``eps``. Module
    buffers (running statistics) are restored before each evaluation so the
    objective is a pure function of the parameters.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = [(n, p) for n, p in module.named_parameters() if p.trainable]
    buffers = {n: b.copy() for n, b in module.named_buffers()}

    # loss values stay in the working dtype; item() would round them to float64
    def evaluate() -> Tensor:
        module._load_buffers(buffers, "")
        return loss_fn()

    module.zero_grad()
    loss = evaluate()
    loss.backward()
    analytic = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for n, p in params}

    report = GradReport(eps=eps, tol=tol)
    for name, p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate().data[()]
            flat[i] = orig - eps
            f_minus = evaluate().data[()]
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        err = float(relative_error(analytic[name], numeric).max()) if numeric.size else 0.0
        report.entries.append((name, err))
    module._load_buffers(buffers, "")
    module.zero_grad()
    report.entries.sort(key=lambda e: -e[1])
    return report
