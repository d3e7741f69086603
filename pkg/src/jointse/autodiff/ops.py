"""Differentiable primitives.

Broadcasting is deliberately narrow: operands must have equal shapes, one
must be a scalar, one must be a trailing suffix of the other (bias
addition), or both have the same rank with singleton dimensions (the
``keepdims`` results of reductions and ``[B, T, 1]`` frame masks).
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from .tensor import Tensor, as_tensor, make_node


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_broadcast(a, b):
    if a == b or a == () or b == ():
        return
    if len(b) <= len(a) and a[len(a) - len(b):] == b:
        return
    if len(a) <= len(b) and b[len(b) - len(a):] == a:
        return
    if len(a) == len(b) and all(x == y or x == 1 or y == 1 for x, y in zip(a, b)):
        return
    raise InvalidInputError(f"incompatible shapes {a} and {b}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b):
    if not isinstance(a, Tensor):
        a = _const(a, b)
    if not isinstance(b, Tensor):
        b = _const(b, a)
    _check_broadcast(a.shape, b.shape)
    return a, b


def add(a, b):
    a, b = _binary(a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _binary(a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _binary(a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _binary(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_node(out, (a, b), bw)


def neg(x):
    return make_node(-x.data, (x,), lambda g: (-g,))


def matmul(a, b):
    """``a @ b`` with numpy batching; ``b`` may be 2-d against a batched ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidInputError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise InvalidInputError(f"matmul batch mismatch {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise InvalidInputError("batched right operand requires batched left operand")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return make_node(a.data @ b.data, (a, b), bw)


def exp(x):
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def log(x):
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x):
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x):
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    pos = x.data > 0
    return make_node(np.where(pos, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * pos,))


def clamp_min(x, floor):
    """max(x, floor) with zero subgradient below the floor."""
    keep = x.data > floor
    out = np.where(keep, x.data, floor).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * keep,))


def softplus(x):
    v = x.data
    out = np.logaddexp(0.0, v)
    return make_node(out, (x,), lambda g: (g * _sigmoid(v),))


def power(x, p):
    p = float(p)
    out = x.data ** p
    return make_node(out, (x,), lambda g: (g * p * x.data ** (p - 1.0),))


def sqrt(x):
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g * 0.5 / out,))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def getitem(x, index):
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        if _has_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_node(np.array(out, copy=True), (x,), bw)


def _has_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def split(x, sizes, axis=-1):
    ax = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[ax]:
        raise InvalidInputError(f"split sizes {sizes} do not cover axis of length {x.shape[ax]}")
    outs, start = [], 0
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + n)
        outs.append(getitem(x, tuple(idx)))
        start += n
    return outs


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape):
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), bw)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), bw)


def embedding(weight, ids):
    """Rows of ``weight`` selected by the integer array ``ids``."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise InvalidInputError("embedding index out of range")

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return make_node(weight.data[ids], (weight,), bw)


def gather_last(x, ids):
    """``x[..., ids[...]]``: picks one entry of the last axis per position."""
    ids = np.asarray(ids)[..., None]
    out = np.take_along_axis(x.data, ids, axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, ids, g[..., None], axis=-1)
        return (full,)

    return make_node(out, (x,), bw)


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true; those entries get no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, value, x.data).astype(x.dtype)
    return make_node(out, (x,), lambda g: (np.where(mask, 0.0, g).astype(g.dtype),))


def stop_gradient(x):
    """Same forward value; contributes nothing to ancestors in backward."""
    return Tensor(x.data)


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Time convolution on ``x[B, T, C_in]`` with ``weight[K, C_in, C_out]``."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise InvalidInputError(f"conv1d shape mismatch {x.shape} vs {weight.shape}")
    k = weight.shape[0]
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    t_out = (xp.shape[1] - k) // stride + 1
    if t_out < 1:
        raise InvalidInputError("conv1d input shorter than kernel")
    span = stride * (t_out - 1) + 1
    out = np.zeros((x.shape[0], t_out, weight.shape[2]), dtype=x.dtype)
    for j in range(k):
        out += xp[:, j:j + span:stride] @ weight.data[j]
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        g2 = g.reshape(-1, g.shape[-1])
        for j in range(k):
            gxp[:, j:j + span:stride] += g @ weight.data[j].T
            gw[j] = xp[:, j:j + span:stride].reshape(-1, xp.shape[2]).T @ g2
        gx = gxp[:, padding:padding + x.shape[1]]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, bw)


def depthwise_conv1d(x, weight, padding=None):
    """Per-channel time convolution, ``x[B, T, C]`` with ``weight[K, C]``.

    Default padding keeps the length unchanged (odd kernels).
    """
    if x.ndim != 3 or weight.ndim != 2 or x.shape[2] != weight.shape[1]:
        raise InvalidInputError(f"depthwise_conv1d shape mismatch {x.shape} vs {weight.shape}")
    k = weight.shape[0]
    pad = (k - 1) // 2 if padding is None else padding
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    t_out = xp.shape[1] - k + 1
    out = np.zeros((x.shape[0], t_out, x.shape[2]), dtype=x.dtype)
    for j in range(k):
        out += xp[:, j:j + t_out] * weight.data[j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for j in range(k):
            gxp[:, j:j + t_out] += g * weight.data[j]
            gw[j] = (xp[:, j:j + t_out] * g).sum(axis=(0, 1))
        return gxp[:, pad:pad + x.shape[1]], gw

    return make_node(out, (x, weight), bw)


def reverse_sequences(x, lengths):
    """Reverse ``x[B, T, ...]`` along time within each sequence's valid length.

    Padding positions stay in place, so the map is its own inverse.
    """
    idx = _reverse_index(x.shape[1], lengths)
    take = idx.reshape(idx.shape + (1,) * (x.ndim - 2))

    def apply(a):
        return np.take_along_axis(a, np.broadcast_to(take, a.shape), axis=1)

    return make_node(apply(x.data), (x,), lambda g: (apply(g),))


def _reverse_index(t, lengths):
    lengths = np.asarray(lengths)
    pos = np.arange(t)[None, :]
    rev = lengths[:, None] - 1 - pos
    return np.where(pos < lengths[:, None], rev, pos)


def _bind():
    T = Tensor
    T.__add__ = lambda a, b: add(a, b)
    T.__radd__ = lambda a, b: add(b, a)
    T.__sub__ = lambda a, b: sub(a, b)
    T.__rsub__ = lambda a, b: sub(b, a)
    T.__mul__ = lambda a, b: mul(a, b)
    T.__rmul__ = lambda a, b: mul(b, a)
    T.__truediv__ = lambda a, b: div(a, b)
    T.__rtruediv__ = lambda a, b: div(b, a)
    T.__neg__ = lambda a: neg(a)
    T.__matmul__ = lambda a, b: matmul(a, b)
    T.__pow__ = lambda a, p: power(a, p)
    T.__getitem__ = lambda a, i: getitem(a, i)
    T.sum = lambda a, axis=None, keepdims=False: sum(a, axis, keepdims)
    T.mean = lambda a, axis=None, keepdims=False: mean(a, axis, keepdims)
    T.reshape = lambda a, *shape: reshape(a, shape[0] if len(shape) == 1 else shape)
    T.transpose = lambda a, *axes: transpose(a, axes or None)
    T.exp = exp
    T.log = log
    T.tanh = tanh
    T.sigmoid = sigmoid
    T.relu = relu


_bind()
