"""Neural network building blocks on top of the autodiff tape.

All sequence layers take ``x[B, T, D]`` plus optional ``lengths`` so
batches can mix utterances of different durations; padded frames never
influence valid ones.
"""
from __future__ import annotations

import enum

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor, is_grad_enabled, make_node
from .errors import InvalidInputError


class Module:
    """Minimal parameter container with torch-like naming."""

    training = False

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self, prefix=""):
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, arrays, prefix=""):
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise InvalidInputError(f"missing parameter {name}")
            src = np.asarray(arrays[name])
            if src.shape != p.shape:
                raise InvalidInputError(f"{name}: shape {src.shape} != {p.shape}")
            p.data = src.astype(p.dtype).copy()

    def name_parameters(self, prefix=""):
        """Stamp each parameter with its dotted name (used by optimizer state)."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def frame_mask(lengths, t_max):
    """Boolean ``[B, T]`` array, true on valid frames."""
    lengths = np.asarray(lengths)
    return np.arange(t_max)[None, :] < lengths[:, None]


def zero_padding(x, lengths):
    if lengths is None:
        return x
    m = frame_mask(lengths, x.shape[1])[..., None].astype(x.dtype)
    return ops.mul(x, Tensor(m))


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(_uniform(rng, (in_dim, out_dim), bound))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x):
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


def linear(x, w, b=None):
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        mu = ops.mean(x, axis=-1, keepdims=True)
        centered = ops.sub(x, mu)
        var = ops.mean(ops.mul(centered, centered), axis=-1, keepdims=True)
        normed = ops.div(centered, ops.sqrt(ops.add(var, self.eps)))
        return ops.add(ops.mul(normed, self.gain), self.bias)


def dropout(x, rate, rng, training):
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return ops.mul(x, Tensor(keep))


# --- activations ------------------------------------------------------------

class ActivationKind(str, enum.Enum):
    RELU = "relu"
    MISH = "mish"
    METAACON = "metaacon"
    SWISH = "swish"
    SIGMOID = "sigmoid"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise InvalidInputError(f"unknown activation {value!r}")


def mish(x):
    return ops.mul(x, ops.tanh(ops.softplus(x)))


def swish(x):
    return ops.mul(x, ops.sigmoid(x))


class MetaACON(Module):
    """ACON-C with a per-utterance switching factor for ``[B, T, C]`` input.

    beta_c = sigmoid(W2 W1 mean_t(x)), the time mean taken over valid frames.
    """

    def __init__(self, channels, rng, reduction=16):
        hidden = max(channels // reduction, 4)
        self.p1 = Parameter(np.ones(channels))
        self.p2 = Parameter(np.zeros(channels))
        self.w1 = Parameter(_uniform(rng, (channels, hidden), 1.0 / np.sqrt(channels)))
        self.w2 = Parameter(_uniform(rng, (hidden, channels), 1.0 / np.sqrt(hidden)))

    def switching_factor(self, x, lengths=None):
        if lengths is None:
            pooled = ops.mean(x, axis=1, keepdims=True)
        else:
            inv_len = (1.0 / np.asarray(lengths, dtype=x.dtype))[:, None, None]
            pooled = ops.mul(ops.sum(zero_padding(x, lengths), axis=1, keepdims=True), inv_len)
        return ops.sigmoid(ops.matmul(ops.matmul(pooled, self.w1), self.w2))

    def __call__(self, x, lengths=None, beta=None):
        if beta is None:
            beta = self.switching_factor(x, lengths)
        dp = ops.sub(self.p1, self.p2)
        dpx = ops.mul(x, dp)
        return ops.add(ops.mul(dpx, ops.sigmoid(ops.mul(beta, dpx))), ops.mul(x, self.p2))


def activation(x, kind, acon=None, lengths=None):
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.RELU:
        return ops.relu(x)
    if kind is ActivationKind.MISH:
        return mish(x)
    if kind is ActivationKind.SWISH:
        return swish(x)
    if kind is ActivationKind.SIGMOID:
        return ops.sigmoid(x)
    if acon is None:
        raise InvalidInputError("MetaACON activation needs its parameter module")
    return acon(x, lengths)


# --- recurrent layers -------------------------------------------------------

def lstm_cell(x_t, h_prev, c_prev, w_ih, w_hh, b):
    """One LSTM step built from primitives; gate order i, f, g, o."""
    gates = ops.add(ops.add(ops.matmul(x_t, w_ih), ops.matmul(h_prev, w_hh)), b)
    i, f, g, o = ops.split(gates, [w_hh.shape[0]] * 4, axis=-1)
    c_t = ops.add(ops.mul(ops.sigmoid(f), c_prev), ops.mul(ops.sigmoid(i), ops.tanh(g)))
    h_t = ops.mul(ops.sigmoid(o), ops.tanh(c_t))
    return h_t, c_t


def _sig(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def lstm_recurrence(xw, w_hh):
    """Run the LSTM recurrence over precomputed input projections.

    ``xw[B, T, 4H]`` already contains ``x @ W_ih + b``; zero initial state.
    The whole sequence is one tape node with a hand-written BPTT backward.
    """
    bsz, t_len, four_h = xw.shape
    hdim = four_h // 4
    if w_hh.shape != (hdim, four_h):
        raise InvalidInputError(f"w_hh shape {w_hh.shape} != ({hdim}, {four_h})")
    dt = xw.dtype
    h = np.zeros((bsz, t_len, hdim), dtype=dt)
    keep = is_grad_enabled() and (xw.requires_grad or w_hh.requires_grad)
    if keep:
        acts = np.empty((bsz, t_len, four_h), dtype=dt)
        cs = np.empty((bsz, t_len, hdim), dtype=dt)
    h_t = np.zeros((bsz, hdim), dtype=dt)
    c_t = np.zeros((bsz, hdim), dtype=dt)
    W = w_hh.data
    for t in range(t_len):
        z = xw.data[:, t] + h_t @ W
        i = _sig(z[:, :hdim])
        f = _sig(z[:, hdim:2 * hdim])
        g = np.tanh(z[:, 2 * hdim:3 * hdim])
        o = _sig(z[:, 3 * hdim:])
        c_t = f * c_t + i * g
        h_t = o * np.tanh(c_t)
        h[:, t] = h_t
        if keep:
            acts[:, t, :hdim] = i
            acts[:, t, hdim:2 * hdim] = f
            acts[:, t, 2 * hdim:3 * hdim] = g
            acts[:, t, 3 * hdim:] = o
            cs[:, t] = c_t

    def bw(gh):
        dxw = np.empty_like(xw.data)
        dW = np.zeros_like(W)
        dh_next = np.zeros((bsz, hdim), dtype=dt)
        dc_next = np.zeros((bsz, hdim), dtype=dt)
        for t in range(t_len - 1, -1, -1):
            i = acts[:, t, :hdim]
            f = acts[:, t, hdim:2 * hdim]
            g = acts[:, t, 2 * hdim:3 * hdim]
            o = acts[:, t, 3 * hdim:]
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
            tc = np.tanh(c)
            dh = gh[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dxw[:, t]
            dz[:, :hdim] = dc * g * i * (1.0 - i)
            dz[:, hdim:2 * hdim] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hdim:3 * hdim] = dc * i * (1.0 - g * g)
            dz[:, 3 * hdim:] = dh * tc * o * (1.0 - o)
            h_prev = h[:, t - 1] if t > 0 else np.zeros_like(c)
            dW += h_prev.T @ dz
            dh_next = dz @ W.T
            dc_next = dc * f
        return dxw, dW

    return make_node(h, (xw, w_hh), bw)


class LSTM(Module):
    def __init__(self, in_dim, hidden, rng):
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(_uniform(rng, (in_dim, 4 * hidden), bound))
        self.w_hh = Parameter(_uniform(rng, (hidden, 4 * hidden), bound))
        self.b = Parameter(_uniform(rng, (4 * hidden,), bound))
        self.hidden = hidden

    def __call__(self, x):
        return lstm_recurrence(linear(x, self.w_ih, self.b), self.w_hh)


class BLSTM(Module):
    """Bidirectional LSTM; output ``[B, T, 2H]`` = [forward | backward]."""

    def __init__(self, in_dim, hidden, rng):
        self.fwd = LSTM(in_dim, hidden, rng)
        self.bwd = LSTM(in_dim, hidden, rng)

    def __call__(self, x, lengths=None):
        if lengths is None:
            lengths = np.full(x.shape[0], x.shape[1])
        forward = self.fwd(x)
        backward = ops.reverse_sequences(self.bwd(ops.reverse_sequences(x, lengths)), lengths)
        return ops.concat([forward, backward], axis=-1)


# --- attention --------------------------------------------------------------

NEG_INF = -1e9


def scaled_dot_attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d)) v over ``[B, H, T, d]``; ``mask`` true = blocked."""
    d = q.shape[-1]
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    if mask is not None:
        scores = ops.masked_fill(scores, mask, NEG_INF)
    return ops.matmul(ops.softmax(scores, axis=-1), v)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, rng):
        if d_model % n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def _heads(self, x):
        b, t, d = x.shape
        return ops.transpose(ops.reshape(x, (b, t, self.n_heads, d // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x, memory=None, mask=None):
        """Self-attention when ``memory`` is None, else cross-attention.

        ``mask`` broadcasts to ``[B, 1 or H, T_q, T_k]`` with true = blocked.
        """
        memory = x if memory is None else memory
        ctx = scaled_dot_attention(self._heads(self.q(x)), self._heads(self.k(memory)),
                                   self._heads(self.v(memory)), mask)
        b, _, t, dh = ctx.shape
        merged = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, t, self.n_heads * dh))
        return self.out(merged)


def key_padding_mask(lengths, t_k):
    """Blocks padded keys: boolean ``[B, 1, 1, T_k]``."""
    return ~frame_mask(lengths, t_k)[:, None, None, :]


def causal_mask(t):
    return np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]


def positional_encoding(t_len, d):
    """Sinusoidal absolute encoding ``[T, d]``: sin on even, cos on odd columns."""
    pos = np.arange(t_len)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((t_len, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: d // 2])
    return pe


# --- conformer pieces -------------------------------------------------------

class FeedForward(Module):
    def __init__(self, d_model, hidden, rng):
        self.norm = LayerNorm(d_model)
        self.up = Linear(d_model, hidden, rng)
        self.down = Linear(hidden, d_model, rng)

    def __call__(self, x):
        return self.down(swish(self.up(self.norm(x))))


class ConformerConvModule(Module):
    """LN -> pointwise(2d) -> GLU -> depthwise conv -> LN -> Swish -> pointwise.

    The residual connection is added by the caller.
    """

    def __init__(self, d_model, rng, kernel_size=15):
        if kernel_size % 2 == 0:
            raise InvalidInputError("kernel_size must be odd for same padding")
        self.norm = LayerNorm(d_model)
        self.pointwise_in = Linear(d_model, 2 * d_model, rng)
        self.depthwise = Parameter(_uniform(rng, (kernel_size, d_model), 1.0 / np.sqrt(kernel_size)))
        self.depthwise_bias = Parameter(np.zeros(d_model))
        self.mid_norm = LayerNorm(d_model)
        self.pointwise_out = Linear(d_model, d_model, rng)

    def __call__(self, x, lengths=None):
        d = x.shape[-1]
        a, gate = ops.split(self.pointwise_in(self.norm(x)), [d, d], axis=-1)
        y = zero_padding(ops.mul(a, ops.sigmoid(gate)), lengths)
        y = ops.add(ops.depthwise_conv1d(y, self.depthwise), self.depthwise_bias)
        return self.pointwise_out(swish(self.mid_norm(y)))


class ConformerBlock(Module):
    def __init__(self, d_model, n_heads, ff_hidden, rng, kernel_size=15):
        self.ff1 = FeedForward(d_model, ff_hidden, rng)
        self.attn_norm = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.conv = ConformerConvModule(d_model, rng, kernel_size)
        self.ff2 = FeedForward(d_model, ff_hidden, rng)
        self.final_norm = LayerNorm(d_model)

    def __call__(self, x, lengths=None):
        mask = None if lengths is None else key_padding_mask(lengths, x.shape[1])
        x = ops.add(x, ops.mul(self.ff1(x), 0.5))
        x = ops.add(x, self.attn(self.attn_norm(x), mask=mask))
        x = ops.add(x, self.conv(x, lengths))
        x = ops.add(x, ops.mul(self.ff2(x), 0.5))
        return self.final_norm(x)
