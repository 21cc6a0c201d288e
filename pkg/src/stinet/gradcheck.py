"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, no_grad


def finite_diff_check(op: Callable[[Tensor], Tensor], input: Tensor,
                      h: float = 1e-5) -> float:
    """Max over elements of |analytic - central| / max(1, |central|).

    `op` must map `input` to a scalar Tensor and be deterministic; a
    computation that yields different values on two identical evaluations
    (e.g. active dropout) is rejected.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError(f"h={h} outside [1e-6, 1e-4]")
    x = Tensor(input.data.copy(), requires_grad=True)
    out = op(x)
    if out.size != 1:
        raise ValueError(f"op must be scalar-valued, got shape {out.shape}")
    with no_grad():
        if op(Tensor(input.data.copy())).item() != out.item():
            raise ValueError("op is not deterministic; cannot finite-difference it")
    out.backward()
    analytic = x.grad.copy()

    worst = 0.0
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = op(Tensor(x.data.copy())).item()
            flat[i] = orig - h
            f_minus = op(Tensor(x.data.copy())).item()
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic.reshape(-1)[i] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst


def finite_diff_check_params(loss_fn: Callable[[], Tensor], params,
                             h: float = 1e-5, max_elements: int = 8,
                             seed: int = 0) -> float:
    """Check d(loss)/d(param) for every parameter, sampling large tensors.

    `loss_fn` closes over the parameters and returns a scalar Tensor.
    For parameters with more than `max_elements` entries, a seeded subset
    of element indices is probed; the analytic gradient is still the full
    reverse-mode result.
    """
    rng = np.random.default_rng(seed)
    loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar")
    for p in params:
        p.grad = None
    loss.backward()
    base_grads = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, analytic in zip(params, base_grads):
        if analytic is None:
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        if n > max_elements:
            idx = rng.choice(n, size=max_elements, replace=False)
        else:
            idx = np.arange(n)
        with no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = loss_fn().item()
                flat[i] = orig - h
                f_minus = loss_fn().item()
                flat[i] = orig
                central = (f_plus - f_minus) / (2.0 * h)
                err = abs(analytic.reshape(-1)[i] - central) / max(1.0, abs(central))
                worst = max(worst, err)
    return worst
