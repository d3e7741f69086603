"""Central finite-difference checks of every differentiable building block.

Each case builds a function ``f`` and its inputs; the checked scalar is
``sum(f(inputs) * c)`` for a fixed random cotangent ``c``, so every output
element contributes. Every coordinate of every input is perturbed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, default_dtype, grad
from .layers import (BLSTM, LSTM, ConformerBlock, ConformerConvModule, FeedForward, LayerNorm,
                     Linear, MetaACON, MultiHeadAttention, causal_mask, key_padding_mask,
                     lstm_cell, mish, swish)
from .signal import StftParams, _window_sum, istft_tensor, logmel_tensor, stft_tensor

STEP = 1e-5
RTOL = 1e-4
# Denominator floor: coordinates whose true gradient is below this are judged on
# absolute error instead, where central differences bottom out near 1e-10.
FLOOR = 1e-5


@dataclass
class CheckResult:
    name: str
    shape: str
    max_rel_error: float
    n_coords: int
    seconds: float
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28} {self.shape:<24} max_rel={self.max_rel_error:.2e} "
                f"coords={self.n_coords} ({self.seconds:.2f}s)")


@dataclass
class Case:
    name: str
    build: object          # build(rng, variant) -> (fn, inputs, shape_label)
    variants: tuple = (0, 1, 2)
    tags: tuple = field(default_factory=tuple)


def check(fn, inputs, rng, h=STEP, rtol=RTOL, floor=FLOOR):
    """Max elementwise relative error between tape and central-difference gradients."""
    out = fn()
    cot = rng.standard_normal(out.shape)
    analytic = grad(out, inputs, grad_output=cot)
    worst, n = 0.0, 0

    def scalar():
        return float(np.sum(fn().data * cot))

    for x, g in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = scalar()
            flat[i] = orig - h
            down = scalar()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), floor)
            worst = max(worst, err)
            n += 1
    return worst, n


def _t(rng, *shape, low=None):
    a = rng.standard_normal(shape)
    if low is not None:
        a = np.sign(a) * (np.abs(a) + low)
    return Tensor(a, requires_grad=True)


def _pos(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)


SHAPES = [(3,), (2, 4), (2, 3, 4)]


def _unary(op, positive=False, away_from_zero=False):
    def build(rng, v):
        s = SHAPES[v]
        x = _pos(rng, *s) if positive else _t(rng, *s, low=0.1 if away_from_zero else None)
        return (lambda: op(x)), [x], str(s)
    return build


def _binary(op, positive_b=False):
    def build(rng, v):
        s = SHAPES[v]
        a = _t(rng, *s)
        b = _pos(rng, *s) if positive_b else _t(rng, *s)
        return (lambda: op(a, b)), [a, b], str(s)
    return build


def _bias_add(rng, v):
    s = SHAPES[v]
    a, b = _t(rng, *s), _t(rng, s[-1])
    return (lambda: ops.mul(ops.add(a, b), b)), [a, b], f"{s}+({s[-1]},)"


def _singleton_mul(rng, v):
    s = [(3, 1), (2, 1, 4), (2, 3, 1)][v]
    full = tuple(3 if d == 1 else d for d in s)
    a, b = _t(rng, *full), _t(rng, *s)
    return (lambda: ops.div(ops.mul(a, b), ops.add(ops.mul(b, b), 1.0))), [a, b], f"{full}*{s}"


def _matmul(rng, v):
    sa, sb = [((3, 4), (4, 2)), ((2, 3, 4), (2, 4, 5)), ((2, 3, 4), (4, 2))][v]
    a, b = _t(rng, *sa), _t(rng, *sb)
    return (lambda: ops.matmul(a, b)), [a, b], f"{sa}@{sb}"


def _power(rng, v):
    x = _pos(rng, *SHAPES[v])
    return (lambda: ops.power(x, 1.7)), [x], str(SHAPES[v])


def _clamp(rng, v):
    x = _t(rng, *SHAPES[v], low=0.1)
    return (lambda: ops.clamp_min(x, 0.0)), [x], str(SHAPES[v])


def _concat(rng, v):
    s = SHAPES[v]
    a, b = _t(rng, *s), _t(rng, *s[:-1], 2)
    return (lambda: ops.mul(ops.concat([a, b], axis=-1), ops.concat([b, a], axis=-1))), [a, b], str(s)


def _split(rng, v):
    s = SHAPES[v][:-1] + (5,)
    x = _t(rng, *s)

    def fn():
        p, q = ops.split(x, [2, 3], axis=-1)
        return ops.concat([ops.mul(q, 2.0), ops.exp(p)], axis=-1)
    return fn, [x], str(s)


def _getitem(rng, v):
    x = _t(rng, 4, 5)
    index = [(slice(1, 3), slice(None, None, 2)), (np.array([0, 2, 2, 3]),), (slice(None), 3)][v]
    return (lambda: ops.getitem(x, index)), [x], f"(4, 5)[{v}]"


def _transpose(rng, v):
    s = SHAPES[v]
    axes = tuple(reversed(range(len(s))))
    x = _t(rng, *s)
    return (lambda: ops.mul(ops.transpose(x, axes), 1.5)), [x], str(s)


def _reshape(rng, v):
    s = SHAPES[v]
    x = _t(rng, *s)
    return (lambda: ops.tanh(ops.reshape(x, (-1,)))), [x], str(s)


def _reduce(op):
    def build(rng, v):
        s = SHAPES[v]
        x = _t(rng, *s)
        axis = [None, -1, 1][v]
        return (lambda: ops.exp(op(x, axis=axis, keepdims=v == 2))), [x], f"{s} axis={axis}"
    return build


def _softmax_like(op):
    def build(rng, v):
        s = SHAPES[v]
        x = _t(rng, *s)
        return (lambda: op(x, axis=-1)), [x], str(s)
    return build


def _embedding(rng, v):
    w = _t(rng, 6, [3, 4, 5][v])
    ids = rng.integers(0, 6, size=[(4,), (2, 3), (2, 2, 3)][v])
    return (lambda: ops.embedding(w, ids)), [w], f"ids{ids.shape}"


def _gather(rng, v):
    s = SHAPES[v][:-1] + (5,)
    x = _t(rng, *s)
    ids = rng.integers(0, 5, size=s[:-1])
    return (lambda: ops.gather_last(x, ids)), [x], str(s)


def _masked_fill(rng, v):
    s = SHAPES[v]
    x = _t(rng, *s)
    mask = rng.random(s) < 0.4
    return (lambda: ops.softmax(ops.masked_fill(x, mask, -1e9), axis=-1)), [x], str(s)


def _conv1d(rng, v):
    b, t, cin, cout, k, stride, pad = [(1, 7, 2, 3, 3, 1, 1), (2, 9, 3, 2, 3, 2, 1), (2, 6, 2, 2, 2, 1, 0)][v]
    x, w, bias = _t(rng, b, t, cin), _t(rng, k, cin, cout), _t(rng, cout)
    return (lambda: ops.conv1d(x, w, bias, stride, pad)), [x, w, bias], f"T={t} k={k} s={stride}"


def _depthwise(rng, v):
    b, t, c, k = [(1, 6, 2, 3), (2, 7, 3, 5), (2, 4, 2, 3)][v]
    x, w = _t(rng, b, t, c), _t(rng, k, c)
    return (lambda: ops.depthwise_conv1d(x, w)), [x, w], f"T={t} C={c} k={k}"


def _reverse(rng, v):
    b, t = [(1, 4), (2, 5), (3, 3)][v]
    x = _t(rng, b, t, 2)
    lengths = rng.integers(1, t + 1, size=b)
    return (lambda: ops.mul(ops.reverse_sequences(x, lengths), x)), [x], f"B={b} T={t}"


# --- signal ---------------------------------------------------------------------

def _small_stft(v):
    return [StftParams(16, 4), StftParams(32, 8), StftParams(512, 128)][v]


def _stft_case(rng, v):
    p = _small_stft(v)
    n = p.n_fft + 3 * p.hop + [0, 3, 0][v]
    w = _t(rng, [1, 2, 1][v], n)

    def fn():
        re, im = stft_tensor(w, p)
        return ops.add(ops.mul(re, re), ops.mul(im, 0.5))
    return fn, [w], f"n_fft={p.n_fft} L={n}"


def _istft_case(rng, v):
    p = _small_stft(v)
    b, frames = [(1, 3), (2, 4), (1, 3)][v]
    re, im = _t(rng, b, frames, p.n_bins), _t(rng, b, frames, p.n_bins)
    counts = [None, np.array([4, 2]), None][v]
    # Edge samples are divided by window sums as small as w(1)**2; weighting by the
    # envelope keeps the probed scalar O(1) so differences are not lost to rounding.
    envelope = Tensor(_window_sum(p, np.full(b, frames) if counts is None else counts, frames))
    return (lambda: ops.mul(istft_tensor(re, im, counts, p), envelope)), [re, im], f"n_fft={p.n_fft} F={frames}"


def _logmel_case(rng, v):
    frames = [1, 2, 3][v]
    power = _pos(rng, 1, frames, 257)
    n_mels = [8, 20, 80][v]
    return (lambda: logmel_tensor(power, n_mels)), [power], f"F={frames} mels={n_mels}"


# --- layers -----------------------------------------------------------------

def _module_case(make, x_shape, call=None):
    def build(rng, v):
        module = make(rng, v)
        x = _t(rng, *x_shape(v))
        fn = (lambda: module(x)) if call is None else (lambda: call(module, x, v))
        return fn, module.parameters() + [x], f"x{x.shape}"
    return build


def _lstm_cell_case(rng, v):
    b, d, h = [(1, 2, 2), (2, 3, 4), (3, 2, 3)][v]
    x, hp, cp = _t(rng, b, d), _t(rng, b, h), _t(rng, b, h)
    w_ih, w_hh, bias = _t(rng, d, 4 * h), _t(rng, h, 4 * h), _t(rng, 4 * h)

    def fn():
        h_t, c_t = lstm_cell(x, hp, cp, w_ih, w_hh, bias)
        return ops.concat([h_t, c_t], axis=-1)
    return fn, [x, hp, cp, w_ih, w_hh, bias], f"B={b} D={d} H={h}"


def _blstm_call(module, x, v):
    lengths = [None, np.array([4, 2]), np.array([3, 3, 1])][v]
    return module(x, lengths)


def _mha_call(module, x, v):
    b, t = x.shape[:2]
    if v == 0:
        return module(x)
    if v == 1:
        return module(x, mask=causal_mask(t))
    memory = Tensor(np.linspace(-1, 1, b * (t + 1) * x.shape[2]).reshape(b, t + 1, x.shape[2]))
    return module(x, memory=memory, mask=key_padding_mask(np.array([t + 1, 2])[:b], t + 1))


def _acon_call(module, x, v):
    lengths = [None, np.array([3, 1]), np.array([2, 4])][v]
    return module(x, lengths)


def _conformer_conv_call(module, x, v):
    return module(x, [None, np.array([5, 3]), np.array([4, 2])][v])


def _conformer_block_call(module, x, v):
    return module(x, [None, np.array([4, 2]), np.array([5, 3])][v])


# --- SE chain ---------------------------------------------------------------------

def _se_chain(phase):
    def build(rng, v):
        from .se import NoisyAnalysis, SeConfig, enhanced_features

        p = StftParams()
        b, frames = [(1, 2), (2, 3), (1, 4)][v]
        cfg = SeConfig(phase_mode=phase, stft=p, n_mels=[20, 40, 80][v])
        re, im = rng.standard_normal((2, b, frames, p.n_bins))
        lengths = np.array([frames, frames - 1][:b])
        analysis = NoisyAnalysis(re, im, np.hypot(re, im), lengths)
        mask = Tensor(rng.uniform(0.2, 1.5, size=(b, frames, p.n_bins)), requires_grad=True)
        return (lambda: enhanced_features(analysis, mask, cfg)[0]), [mask], f"B={b} F={frames}"
    return build


def _se_network(rng, v):
    from .se import MaskEstimator, NoisyAnalysis, SeConfig, enhanced_features, se_loss_tensor

    p = [StftParams(32, 8), StftParams(64, 16), StftParams(32, 8)][v]
    act = ["relu", "mish", "metaacon"][v]
    cfg = SeConfig(n_blstm_layers=1, hidden_units=8, mask_activation=act, phase_mode="preserve",
                   dropout=0.0, n_mels=6, stft=p)
    net = MaskEstimator(cfg, rng)
    b, frames = 2, 3
    re, im = rng.standard_normal((2, b, frames, p.n_bins))
    lengths = np.array([3, 2])
    analysis = NoisyAnalysis(re, im, np.hypot(re, im), lengths)
    clean = rng.uniform(0, 1, size=(b, frames, p.n_bins))

    def fn():
        mask = net(analysis.mag, lengths)
        feats, _ = enhanced_features(analysis, mask, cfg)
        return ops.add(ops.sum(feats), ops.mul(se_loss_tensor(mask, analysis, clean), 10.0))
    return fn, net.parameters(), f"n_fft={p.n_fft} act={act}"


# --- ASR losses ------------------------------------------------------------------

def _ctc_case(rng, v):
    from .asr import ctc_nll

    b, t, k = [(1, 4, 3), (2, 5, 4), (2, 6, 3)][v]
    targets = [[[1]], [[1, 2], [3]], [[1, 1], [2, 1, 2]]][v]
    logits = _t(rng, b, t, k)
    lengths = np.array([t, t - 1][:b])
    return (lambda: ctc_nll(ops.log_softmax(logits, axis=-1), targets, lengths)), [logits], f"B={b} T={t} K={k}"


def _tiny_asr(rng, n_layers=1):
    from .asr import AsrConfig, AsrModel
    from .vocab import Vocabulary

    cfg = AsrConfig(n_encoder_layers=n_layers, n_decoder_layers=n_layers, d_model=8, n_heads=2,
                    ff_hidden=8, kernel_size=3, n_mels=4, vocab=Vocabulary(list("ab")))
    return AsrModel(cfg, rng)


def _att_loss_case(rng, v):
    from .asr import EncoderOutput

    model = _tiny_asr(rng)
    b, t = [(1, 2), (2, 3), (2, 4)][v]
    frames = _t(rng, b, t, 8)
    lengths = np.array([t, t - 1][:b])
    targets = [[[3]], [[3, 4], [4]], [[4, 3, 3], [3]]][v]
    params = model.decoder.parameters() + [frames]
    return (lambda: model.att_loss(EncoderOutput(frames, lengths), targets)), params, f"B={b} T'={t}"


def _asr_loss_case(rng, v):
    model = _tiny_asr(rng)
    b, t = [(1, 8), (2, 9), (2, 12)][v]
    feats = _t(rng, b, t, 4)
    lengths = np.array([t, t - 3][:b])
    targets = [[[3]], [[3, 4], [4]], [[4, 3], [3, 3]]][v]

    def fn():
        return model.loss(model.encode(feats, lengths), targets, 0.3)[0]
    return fn, model.parameters() + [feats], f"B={b} T={t}"


def _registry():
    u = _unary
    cases = [
        Case("add", _binary(ops.add)), Case("sub", _binary(ops.sub)), Case("mul", _binary(ops.mul)),
        Case("div", _binary(ops.div, positive_b=True)), Case("neg", u(ops.neg)),
        Case("bias_broadcast", _bias_add), Case("singleton_broadcast", _singleton_mul),
        Case("matmul", _matmul), Case("exp", u(ops.exp)), Case("log", u(ops.log, positive=True)),
        Case("tanh", u(ops.tanh)), Case("sigmoid", u(ops.sigmoid)),
        Case("relu", u(ops.relu, away_from_zero=True)), Case("clamp_min", _clamp),
        Case("softplus", u(ops.softplus)), Case("power", _power), Case("sqrt", u(ops.sqrt, positive=True)),
        Case("concat", _concat), Case("split", _split), Case("getitem", _getitem),
        Case("transpose", _transpose), Case("reshape", _reshape), Case("sum", _reduce(ops.sum)),
        Case("mean", _reduce(ops.mean)), Case("softmax", _softmax_like(ops.softmax)),
        Case("log_softmax", _softmax_like(ops.log_softmax)), Case("embedding", _embedding),
        Case("gather_last", _gather), Case("masked_fill", _masked_fill), Case("conv1d", _conv1d),
        Case("depthwise_conv1d", _depthwise), Case("reverse_sequences", _reverse),
        Case("stft", _stft_case), Case("istft", _istft_case), Case("logmel", _logmel_case),
        Case("mish", u(mish)), Case("swish", u(swish)),
        Case("linear", _module_case(lambda r, v: Linear([2, 3, 4][v], 3, r), lambda v: [(2, 2), (2, 3, 3), (1, 4)][v])),
        Case("layer_norm", _module_case(lambda r, v: LayerNorm([3, 4, 5][v]), lambda v: [(2, 3), (2, 2, 4), (5,)][v])),
        Case("meta_acon", _module_case(lambda r, v: MetaACON([3, 4, 2][v], r), lambda v: [(2, 3, 3), (2, 3, 4), (2, 4, 2)][v], _acon_call)),
        Case("lstm_cell", _lstm_cell_case),
        Case("lstm", _module_case(lambda r, v: LSTM([2, 3, 2][v], [2, 3, 4][v], r), lambda v: [(1, 3, 2), (2, 4, 3), (2, 2, 2)][v])),
        Case("blstm", _module_case(lambda r, v: BLSTM(2, 3, r), lambda v: [(1, 3, 2), (2, 4, 2), (3, 3, 2)][v], _blstm_call)),
        Case("multi_head_attention", _module_case(lambda r, v: MultiHeadAttention(4, 2, r), lambda v: [(1, 3, 4), (2, 3, 4), (2, 2, 4)][v], _mha_call)),
        Case("feed_forward", _module_case(lambda r, v: FeedForward(4, 6, r), lambda v: [(1, 2, 4), (2, 3, 4), (3, 4)][v])),
        Case("conformer_conv", _module_case(lambda r, v: ConformerConvModule(4, r, [3, 5, 3][v]), lambda v: [(1, 5, 4), (2, 5, 4), (2, 4, 4)][v], _conformer_conv_call)),
        Case("conformer_block", _module_case(lambda r, v: ConformerBlock(4, 2, 6, r, 3), lambda v: [(1, 3, 4), (2, 4, 4), (2, 5, 4)][v], _conformer_block_call)),
        Case("se_chain_preserve", _se_chain("preserve"), tags=("se",)),
        Case("se_chain_discard", _se_chain("discard"), tags=("se",)),
        Case("se_network", _se_network, tags=("se",)),
        Case("ctc", _ctc_case, tags=("asr",)),
        Case("attention_loss", _att_loss_case, tags=("asr",)),
        Case("asr_loss", _asr_loss_case, tags=("asr",)),
    ]
    return cases


def case_names():
    return [c.name for c in _registry()]


def run_case(case, seed=0, rtol=RTOL):
    results = []
    for v in case.variants:
        rng = np.random.default_rng([seed, v, sum(map(ord, case.name))])
        with default_dtype(np.float64):
            fn, inputs, label = case.build(rng, v)
            for x in inputs:
                x.requires_grad = True
            start = time.perf_counter()
            worst, n = check(fn, inputs, rng, rtol=rtol)
        results.append(CheckResult(case.name, label, worst, n, time.perf_counter() - start, worst < rtol))
    return results


def run_suite(names=None, seed=0, rtol=RTOL, log_fn=None):
    """Run selected (default: all) cases; returns the flat list of results."""
    cases = _registry()
    if names:
        wanted = set(names)
        unknown = wanted - {c.name for c in cases}
        if unknown:
            raise KeyError(f"unknown gradcheck cases: {sorted(unknown)}")
        cases = [c for c in cases if c.name in wanted]
    out = []
    for case in cases:
        for res in run_case(case, seed, rtol):
            out.append(res)
            if log_fn:
                log_fn(res)
    return out


__all__ = ["CheckResult", "Case", "check", "case_names", "run_case", "run_suite"]
