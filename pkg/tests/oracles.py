"""Independent scalar/numpy reference implementations used as test oracles.

These deliberately avoid the package's autograd path: everything here is
plain numpy evaluated step by step from the layer equations.
"""
import math

import numpy as np


def lstm_cell_np(x, h, c, w_ih, w_hh, bias):
    """One cell step from the gate equations; order [i, f, g, o]."""
    hid = h.shape[-1]
    gates = x @ w_ih + h @ w_hh + bias
    i = 1.0 / (1.0 + np.exp(-gates[..., 0 * hid:1 * hid]))
    f = 1.0 / (1.0 + np.exp(-gates[..., 1 * hid:2 * hid]))
    g = np.tanh(gates[..., 2 * hid:3 * hid])
    o = 1.0 / (1.0 + np.exp(-gates[..., 3 * hid:4 * hid]))
    c_t = f * c + i * g
    return o * np.tanh(c_t), c_t


def lstm_np(x, w_ih, w_hh, bias, reverse=False):
    """Full unidirectional pass over (T, in) -> (T, hidden)."""
    t_len = x.shape[0]
    hid = w_hh.shape[0]
    h = np.zeros(hid)
    c = np.zeros(hid)
    out = np.zeros((t_len, hid))
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        h, c = lstm_cell_np(x[t], h, c, w_ih, w_hh, bias)
        out[t] = h
    return out


def blstm_np(x, module):
    """(T, in) -> (T, 2*hidden) using an nn.BLSTM module's weights."""
    fwd = lstm_np(x, module.fwd.w_ih.data, module.fwd.w_hh.data,
                  module.fwd.bias.data)
    bwd = lstm_np(x, module.bwd.w_ih.data, module.bwd.w_hh.data,
                  module.bwd.bias.data, reverse=True)
    return np.concatenate([fwd, bwd], axis=-1)


def linear_np(x, module):
    out = x @ module.weight.data
    if module.bias is not None:
        out = out + module.bias.data
    return out


def mha_np(x, attn):
    """(N, d) self-attention from the per-head softmax equation with
    1/sqrt(d_head) scaling."""
    n, d = x.shape
    heads = attn.heads
    dh = d // heads
    q = linear_np(x, attn.wq)
    k = linear_np(x, attn.wk)
    v = linear_np(x, attn.wv)
    out = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = np.array([np.dot(q[i, sl], k[j, sl]) for j in range(n)])
            scores /= math.sqrt(dh)
            e = np.exp(scores - scores.max())
            w = e / e.sum()
            for j in range(n):
                out[i, sl] += w[j] * v[j, sl]
    return linear_np(out, attn.wo)


def spatial_pool_np(q, k, v, scale):
    """Per-scalar evaluation of the spatial trajectory pooling equation.

    q: (Q, dh), k/v: (Tp, S, dh) -> (Q, Tp, dh); softmax over S.
    """
    qn, dh = q.shape
    tp, s, _ = k.shape
    out = np.zeros((qn, tp, dh))
    for qi in range(qn):
        for t in range(tp):
            scores = np.array([np.dot(q[qi], k[t, si]) * scale for si in range(s)])
            e = np.exp(scores - scores.max())
            w = e / e.sum()
            for si in range(s):
                out[qi, t] += w[si] * v[t, si]
    return out


def temporal_pool_np(q, k, v, scale):
    """Per-scalar temporal pooling: q: (Q, dh), k/v: (Q, Tp, dh) -> (Q, dh);
    softmax over Tp."""
    qn, dh = q.shape
    tp = k.shape[1]
    out = np.zeros((qn, dh))
    for qi in range(qn):
        scores = np.array([np.dot(q[qi], k[qi, t]) * scale for t in range(tp)])
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        for t in range(tp):
            out[qi] += w[t] * v[qi, t]
    return out
