"""Conformer encoder, transformer decoder, and the hybrid CTC/attention loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor, make_node, no_grad
from .errors import AlignmentError, InvalidInputError
from .layers import (ConformerBlock, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                     _uniform, causal_mask, frame_mask, key_padding_mask, positional_encoding,
                     zero_padding)
from .vocab import BLANK, PAD, SOS_EOS, TokenSequence, Vocabulary, pad_targets


@dataclass
class AsrConfig:
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    ff_hidden: int = 256
    kernel_size: int = 15
    n_mels: int = 80
    ctc_weight: float = 0.3
    vocab: Vocabulary = field(default_factory=Vocabulary)

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise InvalidInputError("ctc_weight must lie in [0, 1]")
        if self.d_model % self.n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")

    def to_dict(self):
        return {"n_encoder_layers": self.n_encoder_layers, "n_decoder_layers": self.n_decoder_layers,
                "d_model": self.d_model, "n_heads": self.n_heads, "ff_hidden": self.ff_hidden,
                "kernel_size": self.kernel_size, "n_mels": self.n_mels,
                "ctc_weight": self.ctc_weight, "vocab": self.vocab.symbols}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        vocab = Vocabulary(d.pop("vocab"))
        return cls(vocab=vocab, **d)


@dataclass
class EncoderOutput:
    frames: Tensor
    lengths: np.ndarray

    @property
    def frame_count(self):
        return self.lengths


def subsampled_length(t):
    """Frames left after two stride-2, kernel-3, pad-1 convolutions: ceil(T / 4)."""
    t = np.asarray(t)
    half = (t - 1) // 2 + 1
    return (half - 1) // 2 + 1


class Conv1d(Module):
    def __init__(self, in_dim, out_dim, kernel, rng, stride=1, padding=0):
        bound = 1.0 / np.sqrt(in_dim * kernel)
        self.weight = Parameter(_uniform(rng, (kernel, in_dim, out_dim), bound))
        self.bias = Parameter(np.zeros(out_dim))
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConformerEncoder(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.sub1 = Conv1d(cfg.n_mels, d, 3, rng, stride=2, padding=1)
        self.sub2 = Conv1d(d, d, 3, rng, stride=2, padding=1)
        self.blocks = [ConformerBlock(d, cfg.n_heads, cfg.ff_hidden, rng, cfg.kernel_size)
                       for _ in range(cfg.n_encoder_layers)]

    def subsample(self, feats, lengths):
        len1 = (np.asarray(lengths) - 1) // 2 + 1
        x = ops.relu(self.sub1(zero_padding(feats, lengths)))
        x = ops.relu(self.sub2(zero_padding(x, len1)))
        out_len = subsampled_length(lengths)
        pe = positional_encoding(x.shape[1], x.shape[2]).astype(x.dtype)
        return ops.add(x, Tensor(pe)), out_len

    def __call__(self, feats, lengths):
        if feats.shape[1] == 0 or np.min(lengths) < 1:
            raise InvalidInputError("cannot encode an empty feature sequence")
        x, out_len = self.subsample(feats, lengths)
        for block in self.blocks:
            x = block(x, out_len)
        return EncoderOutput(x, out_len)


class DecoderLayer(Module):
    def __init__(self, d, n_heads, ff_hidden, rng):
        self.self_norm = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.cross_norm = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.ff = FeedForward(d, ff_hidden, rng)

    def __call__(self, y, memory, self_mask, memory_mask):
        y = ops.add(y, self.self_attn(self.self_norm(y), mask=self_mask))
        y = ops.add(y, self.cross_attn(self.cross_norm(y), memory=memory, mask=memory_mask))
        return ops.add(y, self.ff(y))


class TransformerDecoder(Module):
    def __init__(self, cfg, rng):
        d, v = cfg.d_model, len(cfg.vocab)
        self.embed = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d), size=(v, d)))
        self.layers = [DecoderLayer(d, cfg.n_heads, cfg.ff_hidden, rng) for _ in range(cfg.n_decoder_layers)]
        self.norm = LayerNorm(d)
        self.out = Linear(d, v, rng)

    def __call__(self, tokens, enc):
        """Logits ``[B, U, V]`` for input token ids ``[B, U]`` (teacher forcing)."""
        u = tokens.shape[1]
        y = ops.embedding(self.embed, tokens)
        y = ops.add(y, Tensor(positional_encoding(u, y.shape[-1]).astype(y.dtype)))
        self_mask = causal_mask(u)
        memory_mask = key_padding_mask(enc.lengths, enc.frames.shape[1])
        for layer in self.layers:
            y = layer(y, enc.frames, self_mask, memory_mask)
        return self.out(self.norm(y))


# --- CTC ----------------------------------------------------------------------

def _lse(*terms):
    out = terms[0]
    for t in terms[1:]:
        out = np.logaddexp(out, t)
    return out


def min_ctc_frames(target):
    """Fewest frames that can emit ``target``: one per symbol plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def ctc_nll(log_probs, targets, input_lengths, blank=BLANK):
    """Per-sequence CTC negative log-likelihood ``[B]`` on the tape.

    ``log_probs[B, T, V]`` are frame log-posteriors. The forward recursion
    runs in log space; the backward pass uses the forward-backward
    occupancies.
    """
    lp = log_probs.data
    bsz, t_max, _ = lp.shape
    input_lengths = np.asarray(input_lengths)
    tgt_lengths = np.array([len(t) for t in targets])
    for b, tgt in enumerate(targets):
        need = min_ctc_frames(tgt)
        if need > input_lengths[b]:
            raise AlignmentError(f"target of length {len(tgt)} needs {need} frames, only {input_lengths[b]} available")
    s_max = 2 * max(tgt_lengths.max(), 0) + 1
    ext = np.full((bsz, s_max), blank, dtype=np.int64)
    for b, tgt in enumerate(targets):
        ext[b, 1:2 * len(tgt):2] = tgt
    s_len = 2 * tgt_lengths + 1
    pos = np.arange(s_max)[None, :]
    s_valid = pos < s_len[:, None]
    skip = np.zeros((bsz, s_max), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    neg = -np.inf
    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (bsz, t_max, s_max)), axis=2)
    emit = np.where(s_valid[:, None, :], emit, neg)

    alpha = np.full((bsz, t_max, s_max), neg)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1:2] = np.where(tgt_lengths[:, None] > 0, emit[:, 0, 1:2], neg)
    for t in range(1, t_max):
        prev = alpha[:, t - 1]
        a1 = np.concatenate([np.full((bsz, 1), neg), prev[:, :-1]], axis=1)
        a2 = np.concatenate([np.full((bsz, 2), neg), prev], axis=1)[:, :s_max]
        a2 = np.where(skip, a2, neg)
        alpha[:, t] = _lse(prev, a1, a2) + emit[:, t]
    last = input_lengths - 1
    idx = np.arange(bsz)
    end_a = alpha[idx, last, s_len - 1]
    end_b = np.where(tgt_lengths > 0, alpha[idx, last, np.maximum(s_len - 2, 0)], neg)
    log_like = np.logaddexp(end_a, end_b)
    nll = -log_like

    def bw(g):
        beta = np.full((bsz, t_max, s_max), neg)
        beta[idx, last, s_len - 1] = emit[idx, last, s_len - 1]
        has = tgt_lengths > 0
        beta[idx[has], last[has], s_len[has] - 2] = emit[idx[has], last[has], s_len[has] - 2]
        skip_next = np.zeros_like(skip)
        skip_next[:, :-2] = skip[:, 2:]
        for t in range(t_max - 2, -1, -1):
            nxt = beta[:, t + 1]
            b1 = np.concatenate([nxt[:, 1:], np.full((bsz, 1), neg)], axis=1)
            b2 = np.concatenate([nxt, np.full((bsz, 2), neg)], axis=1)[:, 2:]
            b2 = np.where(skip_next, b2, neg)
            rec = _lse(nxt, b1, b2) + emit[:, t]
            active = (t < last)[:, None]
            beta[:, t] = np.where(active, rec, beta[:, t])
        with np.errstate(invalid="ignore"):
            occ = np.exp(alpha + beta - emit + nll[:, None, None])
        occ = np.where(np.isfinite(occ), occ, 0.0)
        grad = np.zeros_like(lp)
        for b in range(bsz):
            np.add.at(grad[b], (slice(None), ext[b]), occ[b])
        grad *= (np.arange(t_max)[None, :] < input_lengths[:, None])[..., None]
        return (-grad * g[:, None, None],)

    return make_node(nll.astype(lp.dtype), (log_probs,), bw)


# --- model --------------------------------------------------------------------

def decoder_io(targets):
    """Teacher-forcing inputs ``[sos] + y`` and outputs ``y + [eos]``, padded."""
    ins, _ = pad_targets([[SOS_EOS] + list(t) for t in targets])
    outs, lengths = pad_targets([list(t) + [SOS_EOS] for t in targets])
    return ins, outs, lengths


class AsrModel(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.encoder = ConformerEncoder(cfg, rng)
        self.decoder = TransformerDecoder(cfg, rng)
        self.ctc_head = Linear(cfg.d_model, len(cfg.vocab), rng)

    def encode(self, feats, lengths):
        feats = feats if isinstance(feats, Tensor) else Tensor(np.asarray(feats))
        if feats.shape[-1] != self.cfg.n_mels:
            raise InvalidInputError(f"expected {self.cfg.n_mels}-dim features, got {feats.shape[-1]}")
        return self.encoder(feats, lengths)

    def ctc_log_probs(self, enc):
        return ops.log_softmax(self.ctc_head(enc.frames), axis=-1)

    def ctc_loss(self, enc, targets):
        """Mean over the batch of per-utterance CTC negative log-likelihoods."""
        targets = [getattr(t, "tokens", t) for t in targets]
        return ops.mean(ctc_nll(self.ctc_log_probs(enc), targets, enc.lengths))

    def att_loss(self, enc, targets):
        """Token-level cross entropy averaged over all non-pad target positions."""
        targets = [getattr(t, "tokens", t) for t in targets]
        if any(len(t) == 0 for t in targets):
            raise InvalidInputError("attention loss needs non-empty targets")
        ins, outs, lengths = decoder_io(targets)
        logp = ops.log_softmax(self.decoder(ins, enc), axis=-1)
        picked = ops.gather_last(logp, outs)
        valid = (outs != PAD).astype(picked.dtype)
        return ops.mul(ops.sum(ops.mul(picked, Tensor(valid))), -1.0 / valid.sum())

    def loss(self, enc, targets, ctc_weight=None):
        """``(1 - lambda) * L_att + lambda * L_ctc``; returns (total, att, ctc)."""
        lam = self.cfg.ctc_weight if ctc_weight is None else ctc_weight
        if not 0.0 <= lam <= 1.0:
            raise InvalidInputError("ctc weight must lie in [0, 1]")
        att = self.att_loss(enc, targets)
        ctc = self.ctc_loss(enc, targets)
        return combine_asr_losses(att, ctc, lam), att, ctc

    def greedy_decode(self, enc, mode="attention"):
        with no_grad():
            if mode == "ctc":
                return self._ctc_greedy(enc)
            if mode == "attention":
                return self._att_greedy(enc)
        raise InvalidInputError(f"unknown decode mode {mode!r}")

    def _ctc_greedy(self, enc):
        best = self.ctc_log_probs(enc).data.argmax(axis=-1)
        out = []
        for b, n in enumerate(enc.lengths):
            out.append(self.cfg.vocab.strip_special(ctc_collapse(best[b, :n])))
        return out

    def _att_greedy(self, enc):
        bsz = enc.frames.shape[0]
        max_len = 2 * int(np.max(enc.lengths))
        limits = 2 * np.asarray(enc.lengths)
        seqs = np.full((bsz, 1), SOS_EOS, dtype=np.int64)
        done = np.zeros(bsz, dtype=bool)
        for step in range(max_len):
            logits = self.decoder(seqs, enc).data[:, -1]
            nxt = logits.argmax(axis=-1)
            nxt = np.where(done, PAD, nxt)
            done |= (nxt == SOS_EOS) | (step + 1 >= limits)
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            if done.all():
                break
        out = []
        for b in range(bsz):
            ids = []
            for tok in seqs[b, 1:1 + limits[b]]:
                if tok in (SOS_EOS, PAD):
                    break
                ids.append(int(tok))
            out.append(self.cfg.vocab.strip_special(ids))
        return out


def combine_asr_losses(att, ctc, lam):
    return ops.add(ops.mul(att, 1.0 - lam), ops.mul(ctc, lam))


def ctc_collapse(frame_ids, blank=BLANK):
    """Merge repeated frame labels, then drop blanks."""
    out, prev = [], None
    for i in frame_ids:
        i = int(i)
        if i != prev and i != blank:
            out.append(i)
        prev = i
    return out


# --- single-utterance conveniences ------------------------------------------

def encode(features, model):
    feats = getattr(features, "feats", features)
    return model.encode(Tensor(feats[None]), np.array([feats.shape[0]]))


def ctc_loss(enc, target, model):
    return model.ctc_loss(enc, [target])


def att_loss(enc, target, model):
    return model.att_loss(enc, [target])


def asr_loss(enc, target, model, lam):
    return model.loss(enc, [target], lam)[0]


def greedy_decode(enc, model, mode="attention"):
    ids = model.greedy_decode(enc, mode)[0]
    return TokenSequence(ids, model.cfg.vocab.detokenize(ids) if ids else "")


