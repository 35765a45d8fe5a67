"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every op records its inputs and a closure mapping the output gradient to
input gradients. Leading axes are treated as batch axes wherever an op has a
natural per-sample form (conv2d, maxpool2, dense, the recurrent cells).
"""
from __future__ import annotations

import io
import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None,
                 requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_normal_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian draws with variance 2 / (fan_in + fan_out)."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(out, parents, backward, requires_grad=True, op=op)
    return Tensor(out, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Graph:
    """Topologically ordered view of the computation that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _topo(output)
        self._index = {id(n): i for i, n in enumerate(self.nodes)}

    def inputs_of(self, node: Tensor) -> list[int]:
        return [self._index[id(p)] for p in node._parents if id(p) in self._index]

    def ancestors(self, node: Tensor) -> set[int]:
        """ids of every tensor that ``node`` depends on."""
        seen, stack = set(), [node]
        while stack:
            n = stack.pop()
            for p in n._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        return seen

    def records(self) -> list[tuple[str, list[int]]]:
        return [(n.op, self.inputs_of(n)) for n in self.nodes]


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every leaf that requires grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(range(a.ndim - 1), range(g.ndim)))
            return _unbroadcast(ga, a.shape), gb
        if a.ndim == 1:
            ga = g @ b.data.swapaxes(-1, -2)
            gb = np.multiply.outer(a.data, g)
            return ga, _unbroadcast(gb, b.shape)
        ga = g @ b.data.swapaxes(-1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), bw, "matmul")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, tuple(ts), lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    return _make(out, tuple(ts),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))), "stack")


# ---------------------------------------------------------------- layers

def dense(x, weight, bias=None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and as_tensor(bias).shape != (weight.shape[1],):
        raise ShapeError("dense: bias shape mismatch")
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


_IM2COL_BUDGET = 1 << 22  # floats per im2col chunk


def _im2col(xp: np.ndarray, k: int, ho: int, wo: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    # [n, ho, wo, cin, k, k] -> rows ordered (dy, dx, cin) to match kernel.reshape(-1, cout)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * xp.shape[-1])


def _conv_same(xd: np.ndarray, K: np.ndarray, stride: int) -> np.ndarray:
    n, h, w, cin = xd.shape
    k, cout = K.shape[0], K.shape[3]
    p = k // 2
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0))) if p else xd
    ho, wo = -(-h // stride), -(-w // stride)
    kmat = K.reshape(-1, cout)
    step = max(1, _IM2COL_BUDGET // (ho * wo * k * k * cin))
    out = np.empty((n, ho, wo, cout))
    for s0 in range(0, n, step):
        cols = _im2col(xp[s0: s0 + step], k, ho, wo, stride)
        out[s0: s0 + step] = (cols @ kmat).reshape(-1, ho, wo, cout)
    return out


def conv2d(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """'Same' zero-padded cross-correlation of x[..., h, w, c_in] with kernel[k, k, c_in, c_out]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    k = kernel.shape[0]
    if kernel.ndim != 4 or kernel.shape[1] != k or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be [k, k, c_in, c_out] with odd k, got {kernel.shape}")
    if x.ndim < 3 or x.shape[-1] != kernel.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    if bias is not None and as_tensor(bias).shape != (kernel.shape[3],):
        raise ShapeError("conv2d: bias shape mismatch")
    lead = x.shape[:-3]
    h, w, cin = x.shape[-3:]
    cout = kernel.shape[3]
    xd = x.data.reshape((-1, h, w, cin))
    n = xd.shape[0]
    ho, wo = -(-h // stride), -(-w // stride)
    out = _conv_same(xd, kernel.data, stride).reshape(lead + (ho, wo, cout))

    def bw(g):
        p = k // 2
        gd = g.reshape((n, ho, wo, cout))
        xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0))) if p else xd
        step = max(1, _IM2COL_BUDGET // (ho * wo * k * k * cin))
        gk = np.zeros((k * k * cin, cout))
        for s0 in range(0, n, step):
            cols = _im2col(xp[s0: s0 + step], k, ho, wo, stride)
            gk += cols.T @ gd[s0: s0 + step].reshape(-1, cout)
        gk = gk.reshape(kernel.shape)
        if not x.requires_grad:
            return None, gk
        if stride == 1:
            # the input gradient is a 'same' correlation with the flipped, transposed kernel
            flipped = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2)
            return _conv_same(gd, np.ascontiguousarray(flipped), 1).reshape(x.shape), gk
        gxp = np.zeros_like(xp)
        gcols = (gd.reshape(-1, cout) @ kernel.data.reshape(-1, cout).T).reshape(n, ho, wo, k, k, cin)
        for dy in range(k):
            for dx in range(k):
                gxp[:, dy: dy + (ho - 1) * stride + 1: stride,
                    dx: dx + (wo - 1) * stride + 1: stride] += gcols[:, :, :, dy, dx]
        gx = gxp[:, p: p + h, p: p + w, :] if p else gxp
        return gx.reshape(x.shape), gk

    y = _make(out, (x, kernel), bw, "conv2d")
    return y if bias is None else add(y, bias)


def maxpool2(x) -> Tensor:
    """2x2 / stride-2 max pooling over the (h, w) axes of x[..., h, w, c]; odd edges use a smaller window."""
    x = as_tensor(x)
    h, w, c = x.shape[-3:]
    ho, wo = -(-h // 2), -(-w // 2)
    xd = x.data.reshape((-1, h, w, c))
    n = xd.shape[0]
    padded = np.full((n, ho * 2, wo * 2, c), -np.inf)
    padded[:, :h, :w] = xd
    blocks = padded.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = blocks.argmax(axis=-1)  # first maximum in row-major scan of the window
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros((n, ho, wo, c, 4))
        np.put_along_axis(gb, arg[..., None], g.reshape(n, ho, wo, c)[..., None], axis=-1)
        gp = gb.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * 2, wo * 2, c)
        return (gp[:, :h, :w].reshape(x.shape),)

    return _make(out.reshape(x.shape[:-3] + (ho, wo, c)), (x,), bw, "maxpool2")


class RunningStats:
    """Batch-norm running mean/variance (not trained, but checkpointed)."""

    def __init__(self, channels: int, name: str, momentum: float = 0.9):
        self.name = name
        self.momentum = momentum
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)


def batchnorm(x, gamma, beta, mode: str, stats: RunningStats, eps: float = 1e-5) -> Tensor:
    """Normalise over every axis except the last (channel) axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm: gamma/beta must match the channel axis")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = stats.momentum
        stats.mean = m * stats.mean + (1 - m) * mu
        stats.var = m * stats.var + (1 - m) * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        count = x.data.size // c

        def bw_x(g):
            gx = g * gamma.data
            return inv / count * (count * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes))
    elif mode == "eval":
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean) * inv

        def bw_x(g):
            return g * gamma.data * inv
    else:
        raise ValueError("mode must be 'train' or 'eval'")
    out = xhat * gamma.data + beta.data

    def bw(g):
        return bw_x(g), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gamma, beta), bw, "batchnorm")


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time; eval is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def weighted_sequence_cross_entropy(logits, targets, weights=None) -> Tensor:
    """sum_t w_t * (-log softmax(logits_t)[target_t]) / sum_t w_t over logits[..., T, V]."""
    logits = as_tensor(logits)
    V = logits.shape[-1]
    tgt = np.asarray(targets, dtype=np.intp)
    if tgt.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {tgt.shape} do not match logits {logits.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= V):
        raise IndexError("target index out of range")
    w = np.ones(tgt.shape) if weights is None else np.asarray(as_tensor(weights).data, dtype=DTYPE)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    loss = -(w * picked).sum() / total

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, tgt[..., None], 1.0, axis=-1)
        return (g * (w / total)[..., None] * (p - onehot),)

    return _make(np.array(loss), (logits,), bw, "wce")


# ---------------------------------------------------------------- recurrent cells

def _gru_fwd(xp, hd, wh, bb):
    H = hd.shape[-1]
    gates = xp[..., : 2 * H] + hd @ wh[:, : 2 * H] + bb[: 2 * H]
    u = _sigmoid(gates[..., :H])
    r = _sigmoid(gates[..., H:])
    rh = r * hd
    c = np.tanh(xp[..., 2 * H:] + rh @ wh[:, 2 * H:] + bb[2 * H:])
    return hd + u * (c - hd), (hd, u, r, rh, c)


def _gru_bwd(g, cache, wh):
    hd, u, r, rh, c = cache
    H = hd.shape[-1]
    dc_pre = g * u * (1.0 - c * c)
    du_pre = g * (c - hd) * u * (1.0 - u)
    drh = dc_pre @ wh[:, 2 * H:].T
    dr_pre = drh * hd * r * (1.0 - r)
    dgates = np.concatenate([du_pre, dr_pre], axis=-1)
    dh = g * (1.0 - u) + drh * r + dgates @ wh[:, : 2 * H].T
    dxp = np.concatenate([dgates, dc_pre], axis=-1)
    hd2 = np.broadcast_to(hd, g.shape).reshape(-1, H)
    dwh = np.concatenate([hd2.T @ dgates.reshape(-1, 2 * H),
                          rh.reshape(-1, H).T @ dc_pre.reshape(-1, H)], axis=1)
    return dxp, dh, dwh


def gru_cell(x, h, w_x, w_h, b) -> Tensor:
    """One GRU step on batched rows.

    w_x: [in, 3H], w_h: [H, 3H] and b: [3H] hold the update, reset and
    candidate blocks in that order:
        u = sigmoid(W_u [h, x] + b_u)
        r = sigmoid(W_r [h, x] + b_r)
        c = tanh(W_c [r*h, x] + b_c)
        h' = (1 - u) * h + u * c
    """
    x, h, w_x, w_h, b = (as_tensor(t) for t in (x, h, w_x, w_h, b))
    xp = x.data @ w_x.data + b.data
    out, cache = _gru_fwd(xp, h.data, w_h.data, np.zeros_like(b.data))

    def bw(g):
        dxp, dh, dwh = _gru_bwd(g, cache, w_h.data)
        dx = dxp @ w_x.data.T
        dwx = x.data.reshape(-1, x.shape[-1]).T @ dxp.reshape(-1, dxp.shape[-1])
        return dx, _unbroadcast(dh, h.shape), dwx, dwh, dxp.reshape(-1, dxp.shape[-1]).sum(axis=0)

    return _make(out, (x, h, w_x, w_h, b), bw, "gru_cell")


def _lstm_fwd(xp, hd, cd, wh):
    H = hd.shape[-1]
    pre = xp + hd @ wh
    f = _sigmoid(pre[..., :H])
    i = _sigmoid(pre[..., H: 2 * H])
    o = _sigmoid(pre[..., 2 * H: 3 * H])
    cand = np.tanh(pre[..., 3 * H:])
    c_new = f * cd + i * cand
    tc = np.tanh(c_new)
    return o * tc, c_new, (hd, cd, f, i, o, cand, tc)


def _lstm_bwd(gh, gc, cache, wh):
    hd, cd, f, i, o, cand, tc = cache
    H = hd.shape[-1]
    gc = gc + gh * o * (1.0 - tc * tc)
    dpre = np.concatenate([gc * cd * f * (1.0 - f),
                           gc * cand * i * (1.0 - i),
                           gh * tc * o * (1.0 - o),
                           gc * i * (1.0 - cand * cand)], axis=-1)
    dh = dpre @ wh.T
    dcd = gc * f
    hd2 = np.broadcast_to(hd, gh.shape).reshape(-1, H)
    dwh = hd2.T @ dpre.reshape(-1, 4 * H)
    return dpre, dh, dcd, dwh


def lstm_cell(x, h, cell, w_x, w_h, b) -> Tensor:
    """One LSTM step; returns concat(h', C') along the last axis.

    w_x [in, 4H], w_h [H, 4H], b [4H] in forget, input, output, candidate order:
        f = sigmoid(W_f [h, x] + b_f);  i = sigmoid(W_i [h, x] + b_i)
        o = sigmoid(W_o [h, x] + b_o);  C~ = tanh(W_c [h, x] + b_c)
        C' = f * C + i * C~;             h' = o * tanh(C')
    """
    x, h, cell, w_x, w_h, b = (as_tensor(t) for t in (x, h, cell, w_x, w_h, b))
    H = h.shape[-1]
    xp = x.data @ w_x.data + b.data
    hn, cn, cache = _lstm_fwd(xp, h.data, cell.data, w_h.data)

    def bw(g):
        dpre, dh, dcd, dwh = _lstm_bwd(g[..., :H], g[..., H:], cache, w_h.data)
        dx = dpre @ w_x.data.T
        dwx = x.data.reshape(-1, x.shape[-1]).T @ dpre.reshape(-1, 4 * H)
        return (dx, _unbroadcast(dh, h.shape), _unbroadcast(dcd, cell.shape), dwx, dwh,
                dpre.reshape(-1, 4 * H).sum(axis=0))

    return _make(np.concatenate([hn, cn], axis=-1), (x, h, cell, w_x, w_h, b), bw, "lstm_cell")


def gru_sequence(x, w_x, w_h, b, h0=None, reverse: bool = False) -> Tensor:
    """Run a GRU over x[B, T, in]; returns the hidden states [B, T, H] in input order.

    Backpropagation through time is done inside this single node.
    """
    x, w_x, w_h, b = (as_tensor(t) for t in (x, w_x, w_h, b))
    B, T, _ = x.shape
    H = w_h.shape[0]
    h0 = Tensor(np.zeros((B, H))) if h0 is None else as_tensor(h0)
    xp = x.data @ w_x.data + b.data
    zero_b = np.zeros(3 * H)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    out = np.empty((B, T, H))
    caches = {}
    h = np.broadcast_to(h0.data, (B, H))
    for t in steps:
        h, caches[t] = _gru_fwd(xp[:, t], h, w_h.data, zero_b)
        out[:, t] = h

    def bw(g):
        dxp = np.empty_like(xp)
        dwh = np.zeros_like(w_h.data)
        carry = np.zeros((B, H))
        for t in reversed(list(steps)):
            dxp_t, carry, dwh_t = _gru_bwd(g[:, t] + carry, caches[t], w_h.data)
            dxp[:, t] = dxp_t
            dwh += dwh_t
        dx = dxp @ w_x.data.T
        dwx = x.data.reshape(-1, x.shape[-1]).T @ dxp.reshape(-1, 3 * H)
        return dx, dwx, dwh, dxp.reshape(-1, 3 * H).sum(axis=0), _unbroadcast(carry, h0.shape)

    return _make(out, (x, w_x, w_h, b, h0), bw, "gru_sequence")


def lstm_sequence(x, w_x, w_h, b, h0=None, c0=None, reverse: bool = False) -> Tensor:
    """Run an LSTM over x[B, T, in]; returns concat(h_t, C_t) as [B, T, 2H] in input order."""
    x, w_x, w_h, b = (as_tensor(t) for t in (x, w_x, w_h, b))
    B, T, _ = x.shape
    H = w_h.shape[0]
    h0 = Tensor(np.zeros((B, H))) if h0 is None else as_tensor(h0)
    c0 = Tensor(np.zeros((B, H))) if c0 is None else as_tensor(c0)
    xp = x.data @ w_x.data + b.data
    steps = range(T - 1, -1, -1) if reverse else range(T)
    out = np.empty((B, T, 2 * H))
    caches = {}
    h = np.broadcast_to(h0.data, (B, H))
    c = np.broadcast_to(c0.data, (B, H))
    for t in steps:
        h, c, caches[t] = _lstm_fwd(xp[:, t], h, c, w_h.data)
        out[:, t, :H] = h
        out[:, t, H:] = c

    def bw(g):
        dxp = np.empty_like(xp)
        dwh = np.zeros_like(w_h.data)
        carry_h = np.zeros((B, H))
        carry_c = np.zeros((B, H))
        for t in reversed(list(steps)):
            dpre, carry_h, carry_c, dwh_t = _lstm_bwd(g[:, t, :H] + carry_h, g[:, t, H:] + carry_c,
                                                      caches[t], w_h.data)
            dxp[:, t] = dpre
            dwh += dwh_t
        dx = dxp @ w_x.data.T
        dwx = x.data.reshape(-1, x.shape[-1]).T @ dxp.reshape(-1, 4 * H)
        return (dx, dwx, dwh, dxp.reshape(-1, 4 * H).sum(axis=0),
                _unbroadcast(carry_h, h0.shape), _unbroadcast(carry_c, c0.shape))

    return _make(out, (x, w_x, w_h, b, h0, c0), bw, "lstm_sequence")


# ---------------------------------------------------------------- checkpoints

MAGIC = b"INKCKPT"


class CheckpointError(ValueError):
    pass


VERSION = 1


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<I", fh.read(4))
    name = fh.read(n).decode("utf-8")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).astype(DTYPE)
    return name, arr


def dump_checkpoint(params: Iterable[Parameter], stats: Iterable[RunningStats] = (),
                    header: dict | None = None) -> bytes:
    """Serialise parameters and running statistics; identical inputs give identical bytes."""
    params, stats = list(params), list(stats)
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    meta = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(meta)))
    fh.write(meta)
    fh.write(struct.pack("<I", len(params)))
    for p in params:
        _write_array(fh, p.name, p.data)
    fh.write(struct.pack("<I", 2 * len(stats)))
    for s in stats:
        _write_array(fh, s.name + ".running_mean", s.mean)
        _write_array(fh, s.name + ".running_var", s.var)
    return fh.getvalue()


def parse_checkpoint(blob: bytes) -> tuple[dict, dict, dict]:
    """Returns (header, parameter arrays by name, running-stat arrays by name)."""
    try:
        return _parse(io.BytesIO(blob))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def _parse(fh) -> tuple[dict, dict, dict]:
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(n).decode("utf-8"))
    params, buffers = {}, {}
    (count,) = struct.unpack("<I", fh.read(4))
    for _ in range(count):
        name, arr = _read_array(fh)
        params[name] = arr
    (count,) = struct.unpack("<I", fh.read(4))
    for _ in range(count):
        name, arr = _read_array(fh)
        buffers[name] = arr
    if fh.read(1):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return header, params, buffers


def load_into(params: Iterable[Parameter], stats: Iterable[RunningStats], arrays: dict, buffers: dict) -> None:
    for p in params:
        if p.name not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {p.name}")
        if arrays[p.name].shape != p.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {arrays[p.name].shape} != {p.shape}")
        p.data = arrays[p.name].copy()
    for s in stats:
        s.mean = buffers[s.name + ".running_mean"].copy()
        s.var = buffers[s.name + ".running_var"].copy()


# ---------------------------------------------------------------- checking

def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. entries of ``arr`` (perturbed in place).

    ``entries`` optionally restricts the check to the given flat indices; the
    other positions of the result are left at zero.
    """
    if not arr.flags.c_contiguous:
        raise ValueError("numeric_grad needs a contiguous array")
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(arr.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / den).max()) if analytic.size else 0.0


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences over ``tensors``.

    With ``max_entries`` only that many randomly chosen entries per tensor are probed.
    """
    for t in tensors:
        t.grad = np.zeros_like(t.data)
        t.requires_grad = True
    backward(loss_fn())
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for t in tensors:
        entries = None
        if max_entries is not None and t.data.size > max_entries:
            entries = np.sort(rng.choice(t.data.size, size=max_entries, replace=False))
        numeric = numeric_grad(lambda: float(loss_fn().data), t.data, eps, entries).reshape(-1)
        analytic = t.grad.reshape(-1)
        if entries is not None:
            numeric, analytic = numeric[entries], analytic[entries]
        worst = max(worst, relative_error(analytic, numeric))
    return worst
