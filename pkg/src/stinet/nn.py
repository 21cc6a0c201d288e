"""Neural building blocks: parameters, modules, linear/LSTM/attention layers."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """A trainable tensor. `name` is assigned when the owning model is walked."""

    __slots__ = ("trainable", "name")

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.trainable = trainable
        self.name: str | None = None


class Module:
    """Container with deterministic parameter discovery by attribute order."""

    def __init__(self):
        self.training = True

    def _children(self) -> Iterator[tuple[str, "Module | Parameter"]]:
        for key, value in self.__dict__.items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            else:
                yield from value.named_parameters(path)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_parameters():
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            out[name] = p.data.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        if strict and missing:
            raise KeyError(f"missing parameters in state dict: {missing}")
        for name, value in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = own[name]
            if p.data.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: model {p.data.shape}, "
                    f"checkpoint {value.shape}")
            p.data = value.astype(np.float64).copy()


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, init_scale: float | None = None):
        super().__init__()
        s = init_scale if init_scale is not None else 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-s, s, size=(in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x
        out = flat @ self.weight
        if self.bias is not None:
            out = out + self.bias
        if x.ndim != 2:
            out = out.reshape(*lead, self.weight.shape[1])
        return out

    __call__ = forward


class MLP(Module):
    """Affine stack with an activation between layers (none after the last)."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator,
                 activation: str = "gelu"):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i != last:
                x = _activate(x, self.activation)
        return x

    __call__ = forward


def _activate(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return x.gelu()
    if kind == "relu":
        return x.relu()
    if kind == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation {kind!r}")


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, eps=self.eps) * self.gain + self.bias

    __call__ = forward


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator,
                 init_std: float = 0.02):
        super().__init__()
        self.weight = Parameter(rng.normal(0.0, init_std, size=(count, dim)))

    def forward(self, indices) -> Tensor:
        idx = np.asarray(indices, dtype=np.int64)
        return self.weight[idx]

    __call__ = forward


class Dropout(Module):
    """Inverted dropout driven by an explicitly seeded generator."""

    def __init__(self, rate: float = 0.0, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self._rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self._rng.random(x.shape) < keep) / keep
        return x * Tensor(mask)

    __call__ = forward


class MultiheadSelfAttention(Module):
    """Standard scaled dot-product self-attention over (B, N, d) tokens."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"model width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        dh = self.dim // self.heads
        return x.reshape(b, n, self.heads, dh).transpose((0, 2, 1, 3))

    def forward(self, x: Tensor, return_weights: bool = False):
        b, n, d = x.shape
        dh = d // self.heads
        q = self._split(self.wq(x), b, n)
        k = self._split(self.wk(x), b, n)
        v = self._split(self.wv(x), b, n)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        attn = ag.softmax(scores, axis=-1)
        out = attn @ v
        out = out.transpose((0, 2, 1, 3)).reshape(b, n, d)
        out = self.wo(out)
        if return_weights:
            return out, attn
        return out

    __call__ = forward


class TransformerBlock(Module):
    """Pre-norm encoder block: attention and MLP sublayers with residuals."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4, dropout: float = 0.0, seed: int = 0):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP([dim, mlp_ratio * dim, dim], rng)
        self.drop = Dropout(dropout, seed=seed)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attn(self.ln1(x)))
        x = x + self.drop(self.mlp(self.ln2(x)))
        return x

    __call__ = forward


class TransformerEncoder(Module):
    def __init__(self, dim: int, heads: int, layers: int,
                 rng: np.random.Generator, mlp_ratio: int = 4,
                 dropout: float = 0.0):
        super().__init__()
        self.blocks = [TransformerBlock(dim, heads, rng, mlp_ratio, dropout, seed=i)
                       for i in range(layers)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    __call__ = forward


class LSTM(Module):
    """Unidirectional LSTM over (B, T, in) with fused gate weights.

    Input projections for the whole sequence are computed in one matmul;
    the per-step work is only the recurrent matmul and the fused gate
    nonlinearity. Gate order is [input, forget, cell, output]; the forget
    bias starts at 1.0.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        s = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = Parameter(rng.uniform(-s, s, size=(in_dim, 4 * hidden)))
        self.w_hh = Parameter(rng.uniform(-s, s, size=(hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Parameter(bias)

    def forward(self, x: Tensor, reverse: bool = False,
                return_sequence: bool = True) -> Tensor:
        b, t, _ = x.shape
        h = self.hidden
        xp = (x.reshape(b * t, x.shape[-1]) @ self.w_ih + self.bias).reshape(b, t, 4 * h)
        h_t = Tensor(np.zeros((b, h)))
        c_t = Tensor(np.zeros((b, h)))
        steps = range(t - 1, -1, -1) if reverse else range(t)
        outputs: list[Tensor | None] = [None] * t
        for step in steps:
            h_t, c_t = lstm_cell(xp[:, step, :], h_t, c_t, self.w_hh)
            outputs[step] = h_t
        if not return_sequence:
            return outputs[t - 1]
        return ag.stack(outputs, axis=1)

    __call__ = forward


def _lstm_gate_step(gates: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Fused cell update from gate preactivations; returns (h_t, c_t).

    Two hand-differentiated nodes instead of ~a dozen elementwise ones;
    this is the training-loop hot path.
    """
    hid = c_prev.shape[-1]
    gd = gates.data
    i = 1.0 / (1.0 + np.exp(-gd[:, 0 * hid:1 * hid]))
    f = 1.0 / (1.0 + np.exp(-gd[:, 1 * hid:2 * hid]))
    g = np.tanh(gd[:, 2 * hid:3 * hid])
    o = 1.0 / (1.0 + np.exp(-gd[:, 3 * hid:4 * hid]))
    c_data = f * c_prev.data + i * g

    def bw_c(dc):
        buf = np.empty_like(gd)
        buf[:, 0 * hid:1 * hid] = dc * g * i * (1.0 - i)
        buf[:, 1 * hid:2 * hid] = dc * c_prev.data * f * (1.0 - f)
        buf[:, 2 * hid:3 * hid] = dc * i * (1.0 - g * g)
        buf[:, 3 * hid:4 * hid] = 0.0
        gates._accumulate_owned(buf)
        if c_prev.requires_grad:
            c_prev._accumulate_owned(dc * f)

    c_t = Tensor._make(c_data, (gates, c_prev), bw_c)

    tanh_c = np.tanh(c_data)
    h_data = o * tanh_c

    def bw_h(dh):
        buf = np.empty_like(gd)
        buf[:, 0:3 * hid] = 0.0
        buf[:, 3 * hid:4 * hid] = dh * tanh_c * o * (1.0 - o)
        gates._accumulate_owned(buf)
        c_t._accumulate_owned(dh * o * (1.0 - tanh_c * tanh_c))

    h_t = Tensor._make(h_data, (gates, c_t), bw_h)
    return h_t, c_t


def lstm_cell(x_proj: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_hh: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; `x_proj` is the precomputed input projection + bias."""
    gates = x_proj + h_prev @ w_hh
    return _lstm_gate_step(gates, c_prev)


class BLSTM(Module):
    """Bidirectional LSTM; outputs per-position [forward ; backward] states."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = LSTM(in_dim, hidden, rng)
        self.bwd = LSTM(in_dim, hidden, rng)

    def forward(self, x: Tensor, return_sequence: bool = True) -> Tensor:
        out_f = self.fwd(x, return_sequence=return_sequence)
        out_b = self.bwd(x, reverse=True, return_sequence=return_sequence)
        return ag.concatenate([out_f, out_b], axis=-1)

    __call__ = forward
