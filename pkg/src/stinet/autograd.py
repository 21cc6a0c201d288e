"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is CPU numpy under the hood. Gradients are accumulated by
summation in a fixed topological order, so repeated backward passes over
the same graph are bit-identical.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (eval / data prep)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis)))
               for p in parts)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be shared with (or be a view into) another buffer
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray) -> None:
        """Like _accumulate, but the caller guarantees `g` is freshly
        allocated with the right shape, so ownership can transfer."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    # -- graph construction ---------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor (defaults to d(self)=1)."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- arithmetic ------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def bw(g):
            self._accumulate_owned(-g)

        return Tensor._make(-self.data, (self,), bw)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data * other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate_owned(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate_owned(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(out_data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data / other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate_owned(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate_owned(_unbroadcast(-g * self.data / (other.data ** 2),
                                                     other.shape))

        return Tensor._make(out_data, (self, other), bw)

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def bw(g):
            self._accumulate_owned(g * exponent * self.data ** (exponent - 1))

        return Tensor._make(out_data, (self,), bw)

    def __matmul__(self, other) -> "Tensor":
        other = self._coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ValueError("matmul requires operands with ndim >= 2")
        out_data = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate_owned(
                    _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape))
            if other.requires_grad:
                other._accumulate_owned(
                    _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape))

        return Tensor._make(out_data, (self, other), bw)

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, self.shape))

        return Tensor._make(out_data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        in_shape = self.shape

        def bw(g):
            self._accumulate(g.reshape(in_shape))

        return Tensor._make(out_data, (self,), bw)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = np.argsort(axes)
        out_data = self.data.transpose(axes)

        def bw(g):
            self._accumulate(g.transpose(inv))

        return Tensor._make(out_data, (self,), bw)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def broadcast_to(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(shape)
        out_data = np.broadcast_to(self.data, shape)
        in_shape = self.shape

        def bw(g):
            self._accumulate(_unbroadcast(g, in_shape))

        return Tensor._make(np.ascontiguousarray(out_data), (self,), bw)

    def __getitem__(self, idx) -> "Tensor":
        out_data = self.data[idx]
        if np.isscalar(out_data) or out_data.ndim == 0:
            out_data = np.asarray(out_data)
        basic = _is_basic_index(idx)

        def bw(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
                if basic:
                    self.grad[idx] = g
                    return
            if basic:
                # basic indexing never aliases, so += is safe and fast
                self.grad[idx] += g
            else:
                np.add.at(self.grad, idx, g)

        return Tensor._make(np.ascontiguousarray(out_data), (self,), bw)

    # -- elementwise nonlinearities ------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def bw(g):
            self._accumulate_owned(g * out_data)

        return Tensor._make(out_data, (self,), bw)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def bw(g):
            self._accumulate_owned(g / self.data)

        return Tensor._make(out_data, (self,), bw)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def bw(g):
            self._accumulate_owned(g * 0.5 / out_data)

        return Tensor._make(out_data, (self,), bw)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def bw(g):
            self._accumulate_owned(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (self,), bw)

    def sigmoid(self) -> "Tensor":
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bw(g):
            self._accumulate_owned(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), bw)

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)

        def bw(g):
            self._accumulate_owned(g * (self.data > 0.0))

        return Tensor._make(out_data, (self,), bw)

    def gelu(self) -> "Tensor":
        """Exact GELU x * Phi(x); smooth, so finite differences behave."""
        phi = 0.5 * (1.0 + _erf(self.data * _INV_SQRT2))
        out_data = self.data * phi

        def bw(g):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * self.data * self.data)
            self._accumulate_owned(g * (phi + self.data * pdf))

        return Tensor._make(out_data, (self,), bw)


def _toposort(root: Tensor) -> list[Tensor]:
    """Post-order DFS with a fixed child order, so backward is deterministic."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


# -- free functions ----------------------------------------------------------


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._make(out_data, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else axis + t.ndim + 1, 1)
        expanded.append(t.reshape(shape))
    return concatenate(expanded, axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-max-stabilized softmax along `axis` (fused forward/backward).

    Subtracting the (detached) max is exact: softmax is invariant to
    per-row constant shifts, so the derivative through the max is zero.
    """
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate_owned((g - dot) * out_data)

    return Tensor._make(out_data, (x,), bw)


def softmax_rows(x: Tensor | np.ndarray) -> Tensor:
    """Softmax over the last axis of a matrix, with input validation."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {x.shape}")
    finite = np.isfinite(x.data).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"softmax_rows: non-finite value in row {bad}")
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        x._accumulate_owned(g - sm * g.sum(axis=axis, keepdims=True))

    return Tensor._make(out_data, (x,), bw)


def cross_entropy_loss(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"expected logits of shape (B, K), got {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        bad = int(labels[(labels < 0) | (labels >= k)][0])
        raise ValueError(f"label {bad} out of range [0, {k})")
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(b), labels]
    return -picked.mean()


def layer_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (fused)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out_data = centered * inv_std

    def bw(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_mean = (g * out_data).mean(axis=-1, keepdims=True)
        x._accumulate_owned(inv_std * (g - g_mean - out_data * gx_mean))

    return Tensor._make(out_data, (x,), bw)


def where_mask(mask: np.ndarray, x: Tensor, other: float = 0.0) -> Tensor:
    """x where mask else `other`; mask is a constant."""
    out_data = np.where(mask, x.data, other)

    def bw(g):
        x._accumulate_owned(g * mask)

    return Tensor._make(out_data, (x,), bw)
