"""AdamW with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .nn import Parameter


class OptimizerState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, lr: float, beta1: float, beta2: float, eps: float,
                 weight_decay: float):
        self.step = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}


class AdamW:
    def __init__(self, named_params: list[tuple[str, Parameter]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(named_params)
        seen = set()
        for name, _ in self.params:
            if name in seen:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(name)
        self.state = OptimizerState(lr, betas[0], betas[1], eps, weight_decay)
        for name, p in self.params:
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one decoupled-weight-decay Adam update to all parameters.

        Parameters with no gradient this step still receive weight decay,
        matching the decoupled formulation where decay is independent of
        the gradient path.
        """
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params:
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if grad.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {grad.shape} does not match parameter "
                    f"{name!r} of shape {p.data.shape}")
            if not np.isfinite(grad).all():
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            m = s.first_moment[name]
            v = s.second_moment[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * grad
            v *= s.beta2
            v += (1.0 - s.beta2) * grad * grad
            m_hat = m / bc1
            v_hat = v / bc2
            if s.weight_decay != 0.0:
                p.data -= s.lr * s.weight_decay * p.data
            p.data -= s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
