"""Joint SE + ASR training: loss composition, gradient routing, and the loop.

Modes
-----
``baseline``   ASR on MVN-normalized noisy log-mel features, no SE.
``disjoint``   SE trained on the SE loss alone, then ASR on frozen-SE output.
``joint``      everything trained from the ASR loss only (mono-task).
``mtjl``       ``(1 - beta) * L_asr + beta * L_se`` through one backward pass.
``dc-mtjl``    dual channel: clean features also train the ASR; the ASR
               update is ``gamma * dL_asr_clean + (1 - gamma) * dL_asr_noisy``
               while the SE update is ``beta * dL_se + (1 - beta) * dL_asr_noisy``.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .asr import AsrConfig, AsrModel
from .autodiff import ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.optim import Adam, clip_by_global_norm, global_norm
from .autodiff.tensor import Tensor, grad, no_grad
from .corpus import load_pairs
from .errors import InvalidInputError, NumericDivergence
from .layers import frame_mask
from .se import MaskEstimator, NoisyAnalysis, SeConfig, enhanced_features, se_loss_tensor
from .signal import (SPEED_FACTORS, MvnStats, StftParams, Waveform, compute_mvn, logmel,
                     speed_perturb, stft)
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingMode(str, enum.Enum):
    BASELINE = "baseline"
    DISJOINT = "disjoint"
    JOINT = "joint"
    MTJL = "mtjl"
    DC_MTJL = "dc-mtjl"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"joint-monotask": "joint", "dc-mtjl": "dc-mtjl", "dcmtjl": "dc-mtjl"}
        key = aliases.get(key, key)
        for mode in cls:
            if mode.value == key:
                return mode
        raise InvalidInputError(f"unknown training mode {value!r}")

    @property
    def uses_se(self):
        return self is not TrainingMode.BASELINE


@dataclass
class LossWeights:
    lam: float = 0.3
    beta: float = 0.3
    gamma: float = 0.7

    def __post_init__(self):
        for name in ("lam", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")


# --- feature cache and batching -----------------------------------------------

@dataclass
class Utterance:
    """Per-utterance constants derived once from an aligned clean/noisy pair."""

    id: str
    transcript: str
    tokens: list
    noisy_real: np.ndarray
    noisy_imag: np.ndarray
    clean_mag: np.ndarray
    noisy_logmel: np.ndarray
    clean_logmel: np.ndarray

    @property
    def n_frames(self):
        return self.noisy_real.shape[0]


def prepare_utterance(uid, clean, noisy, transcript, vocab, params=None, n_mels=80):
    params = params or StftParams()
    xs = stft(noisy, params)
    noisy_mag = np.hypot(xs.real, xs.imag)
    clean_mag = None
    clean_logmel = None
    if clean is not None:
        cs = stft(clean, params)
        clean_mag = np.hypot(cs.real, cs.imag)
        clean_logmel = logmel(clean_mag, n_mels).feats
    return Utterance(uid, transcript, vocab.tokenize(transcript).tokens, xs.real, xs.imag,
                     clean_mag, logmel(noisy_mag, n_mels).feats, clean_logmel)


def prepare_pairs(pairs, vocab, params=None, n_mels=80, speed_factors=None):
    """Cache features for every pair, optionally adding speed-perturbed copies
    (clean and noisy resampled by the same factor so they stay aligned)."""
    out = []
    for p in pairs:
        for factor in (speed_factors or (1.0,)):
            clean, noisy, suffix = p.clean, p.noisy, ""
            if factor != 1.0:
                clean, noisy = speed_perturb(p.clean, factor), speed_perturb(p.noisy, factor)
                suffix = f"-sp{factor:g}"
            out.append(prepare_utterance(p.id + suffix, clean, noisy, p.transcript, vocab, params, n_mels))
    return out


@dataclass
class Batch:
    utterances: list
    analysis: NoisyAnalysis
    clean_mag: np.ndarray | None
    noisy_logmel: np.ndarray
    clean_logmel: np.ndarray | None
    targets: list

    @property
    def frame_lengths(self):
        return self.analysis.frame_lengths

    @property
    def has_clean(self):
        return self.clean_mag is not None


def _stack(arrays, t_max):
    out = np.zeros((len(arrays), t_max) + arrays[0].shape[1:])
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
    return out


def make_batch(utts):
    lengths = np.array([u.n_frames for u in utts])
    t = lengths.max()
    real = _stack([u.noisy_real for u in utts], t)
    imag = _stack([u.noisy_imag for u in utts], t)
    paired = all(u.clean_mag is not None for u in utts)
    return Batch(
        utts,
        NoisyAnalysis(real, imag, np.hypot(real, imag), lengths),
        _stack([u.clean_mag for u in utts], t) if paired else None,
        _stack([u.noisy_logmel for u in utts], t),
        _stack([u.clean_logmel for u in utts], t) if paired else None,
        [u.tokens for u in utts],
    )


# --- the model pair ------------------------------------------------------------

class JointSystem:
    """SE front-end (optional), ASR back-end, and the global MVN statistics."""

    def __init__(self, asr_cfg, se_cfg=None, mvn=None, seed=0):
        rng = np.random.default_rng(seed)
        self.asr_cfg = asr_cfg
        self.se_cfg = se_cfg
        self.se = MaskEstimator(se_cfg, rng).name_parameters("se.") if se_cfg is not None else None
        self.asr = AsrModel(asr_cfg, rng).name_parameters("asr.")
        self.mvn = mvn

    @property
    def vocab(self):
        return self.asr_cfg.vocab

    def se_params(self):
        return self.se.parameters() if self.se is not None else []

    def asr_params(self):
        return self.asr.parameters()

    def all_params(self):
        return self.se_params() + self.asr_params()

    def train(self, mode=True):
        self.asr.train(mode)
        if self.se is not None:
            self.se.train(mode)
        return self

    def normalize(self, feats):
        """Apply global MVN to a tensor or array of log-mel features."""
        mean, std = self.mvn.mean, self.mvn.std
        if isinstance(feats, Tensor):
            return ops.div(ops.sub(feats, mean.astype(feats.dtype)), std.astype(feats.dtype))
        return Tensor((feats - mean) / std)

    def mask(self, batch):
        return self.se(batch.analysis.mag, batch.frame_lengths)

    def enhanced_asr_input(self, batch, mask):
        feats, _ = enhanced_features(batch.analysis, mask, self.se_cfg)
        return self.normalize(feats)

    def asr_loss(self, feats, batch, lam):
        enc = self.asr.encode(feats, batch.frame_lengths)
        return self.asr.loss(enc, batch.targets, lam)

    def asr_input(self, batch, use_se=True):
        if self.se is None or not use_se:
            return self.normalize(batch.noisy_logmel)
        return self.enhanced_asr_input(batch, self.mask(batch))

    def transcribe_utterances(self, utts, mode="attention", batch_size=32):
        """Greedy transcripts for cached utterances, batched by length."""
        self.train(False)
        order = sorted(range(len(utts)), key=lambda i: utts[i].n_frames)
        result = [None] * len(utts)
        with no_grad():
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                batch = make_batch([utts[i] for i in idx])
                enc = self.asr.encode(self.asr_input(batch), batch.frame_lengths)
                for i, ids in zip(idx, self.asr.greedy_decode(enc, mode)):
                    result[i] = self.vocab.detokenize(ids) if ids else ""
        return result

    def transcribe(self, waves, mode="attention", batch_size=32):
        utts = [prepare_utterance(f"u{i}", None, w if isinstance(w, Waveform) else Waveform(w),
                                  "".join(self.vocab.symbols[:1]), self.vocab,
                                  self._stft_params(), self.asr_cfg.n_mels)
                for i, w in enumerate(waves)]
        return self.transcribe_utterances(utts, mode, batch_size)

    def _stft_params(self):
        return self.se_cfg.stft if self.se_cfg is not None else StftParams()

    # checkpoint plumbing

    def state_arrays(self):
        arrays = {}
        for p in self.all_params():
            arrays[p.name] = p.data
        arrays["mvn.mean"] = self.mvn.mean
        arrays["mvn.std"] = self.mvn.std
        return arrays

    def meta(self):
        return {"asr_config": self.asr_cfg.to_dict(),
                "se_config": None if self.se_cfg is None else self.se_cfg.to_dict()}

    def load_arrays(self, arrays):
        for p in self.all_params():
            if p.name not in arrays:
                raise InvalidInputError(f"checkpoint lacks parameter {p.name}")
            p.data = np.array(arrays[p.name], dtype=p.dtype)
        self.mvn = MvnStats(np.array(arrays["mvn.mean"]), np.array(arrays["mvn.std"]))

    def save(self, path, optimizer=None, extra_meta=None):
        arrays = dict(self.state_arrays())
        meta = self.meta()
        if optimizer is not None:
            arrays.update(optimizer.state_arrays())
            meta["adam_step"] = optimizer.step_count
            meta["adam_params"] = [p.name for p in optimizer.params]
        meta.update(extra_meta or {})
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        se_cfg = None if meta.get("se_config") is None else SeConfig.from_dict(meta["se_config"])
        system = cls(AsrConfig.from_dict(meta["asr_config"]), se_cfg)
        system.load_arrays(arrays)
        return system, arrays, meta


# --- loss composition and gradient routing -----------------------------------------

def joint_loss(asr_loss, se_loss, beta):
    """Multitask objective ``(1 - beta) * L_asr + beta * L_se``."""
    return ops.add(ops.mul(asr_loss, 1.0 - beta), ops.mul(se_loss, beta))


@dataclass
class StepReport:
    """Losses and gradient norms of one update; ``step`` counts updates from 1."""

    step: int
    mode: str
    loss_joint: float
    loss_asr_noisy: float | None = None
    loss_asr_clean: float | None = None
    loss_se: float | None = None
    loss_att: float | None = None
    loss_ctc: float | None = None
    grad_norm_se: float | None = None
    grad_norm_asr: float | None = None
    lr: float | None = None
    valid_cer: float | None = None
    elapsed_s: float | None = None

    def to_json(self):
        return json.dumps({k: v for k, v in dataclasses.asdict(self).items() if v is not None})


def mtjl_gradients(system, batch, weights, mode=TrainingMode.MTJL):
    """One backward pass through the single-channel objective.

    ``joint`` mode is the ``beta = 0`` case with the SE term left out.
    Returns (loss tensor, grads for ``system.all_params()``, report dict).
    """
    if not batch.has_clean and mode is TrainingMode.MTJL:
        raise InvalidInputError("mtjl needs clean references for the SE loss")
    mask = system.mask(batch)
    total_asr, att, ctc = system.asr_loss(system.enhanced_asr_input(batch, mask), batch, weights.lam)
    parts = {"loss_asr_noisy": total_asr.item(), "loss_att": att.item(), "loss_ctc": ctc.item()}
    if mode is TrainingMode.JOINT:
        loss = total_asr
    else:
        l_se = se_loss_tensor(mask, batch.analysis, batch.clean_mag)
        loss = joint_loss(total_asr, l_se, weights.beta)
        parts["loss_se"] = l_se.item()
    return loss, grad(loss, system.all_params()), parts


def mtjl_loss(system, batch, weights):
    return mtjl_gradients(system, batch, weights)[0]


def dc_mtjl_gradients(system, batch, weights):
    """Dual-channel gradients with per-group weighting of the noisy ASR loss.

    The SE forward pass is cut at the mask so the noisy-channel ASR loss
    and the SE loss each backpropagate to the mask once; their weighted
    sum then traverses the BLSTM stack in a single vector-Jacobian product.
    The clean channel never touches the SE graph.
    """
    if not batch.has_clean:
        raise InvalidInputError("dc-mtjl needs paired clean utterances in every batch")
    se_params, asr_params = system.se_params(), system.asr_params()
    mask = system.mask(batch)
    cut = Tensor(mask.data, requires_grad=True)

    l_noisy, att_n, ctc_n = system.asr_loss(system.enhanced_asr_input(batch, cut), batch, weights.lam)
    l_se = se_loss_tensor(cut, batch.analysis, batch.clean_mag)
    l_clean, _, _ = system.asr_loss(system.normalize(batch.clean_logmel), batch, weights.lam)

    g_noisy = grad(l_noisy, asr_params + [cut])
    g_asr_noisy, g_mask_noisy = g_noisy[:-1], g_noisy[-1]
    g_mask_se = grad(l_se, cut)
    g_asr_clean = grad(l_clean, asr_params)

    mask_cotangent = weights.beta * g_mask_se + (1.0 - weights.beta) * g_mask_noisy
    g_se = grad(mask, se_params, grad_output=mask_cotangent)
    g_asr = [weights.gamma * c + (1.0 - weights.gamma) * n for c, n in zip(g_asr_clean, g_asr_noisy)]

    ln, lc, ls = l_noisy.item(), l_clean.item(), l_se.item()
    parts = {"loss_asr_noisy": ln, "loss_asr_clean": lc, "loss_se": ls,
             "loss_att": att_n.item(), "loss_ctc": ctc_n.item(),
             "loss_asr_joint": weights.gamma * lc + (1.0 - weights.gamma) * ln,
             "loss_se_joint": weights.beta * ls + (1.0 - weights.beta) * ln}
    joint = parts["loss_asr_joint"] + weights.beta * ls
    return joint, g_se + g_asr, parts


def se_only_gradients(system, batch):
    l_se = se_loss_tensor(system.mask(batch), batch.analysis, batch.clean_mag)
    return l_se, grad(l_se, system.se_params()), {"loss_se": l_se.item()}


def asr_only_gradients(system, batch, weights, features):
    total, att, ctc = system.asr_loss(features, batch, weights.lam)
    return total, grad(total, system.asr_params()), {
        "loss_asr_noisy": total.item(), "loss_att": att.item(), "loss_ctc": ctc.item()}


# --- configuration -------------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "mtjl"
    weights: LossWeights = field(default_factory=LossWeights)
    se: SeConfig = field(default_factory=SeConfig)
    asr: AsrConfig = field(default_factory=AsrConfig)
    lr: float = 0.002
    batch_size: int = 32
    steps: int = 2000
    se_steps: int | None = None
    seed: int = 0
    speed_perturb: bool = False
    grad_clip: float = 5.0
    valid_every: int = 200
    warmup: int = 0
    corpus_dir: str | None = None
    train_manifest: str | None = None
    valid_manifest: str | None = None
    test_manifest: str | None = None
    run_dir: str | None = None
    workers: int = 1
    target_cer: float | None = None

    def __post_init__(self):
        self.mode = TrainingMode.parse(self.mode).value
        if self.batch_size < 1 or self.steps < 0:
            raise InvalidInputError("batch_size must be >= 1 and steps >= 0")

    def manifest(self, split):
        explicit = getattr(self, f"{split}_manifest")
        if explicit:
            return explicit
        if self.corpus_dir:
            return os.path.join(self.corpus_dir, f"{split}.jsonl")
        return None

    def to_flat(self):
        w, s, a = self.weights, self.se, self.asr
        return {
            "train.mode": self.mode, "train.lr": self.lr, "train.batch_size": self.batch_size,
            "train.steps": self.steps, "train.se_steps": self.se_steps, "train.seed": self.seed,
            "train.speed_perturb": self.speed_perturb, "train.grad_clip": self.grad_clip,
            "train.valid_every": self.valid_every, "train.warmup": self.warmup,
            "train.workers": self.workers, "train.target_cer": self.target_cer,
            "weights.lambda": w.lam, "weights.beta": w.beta, "weights.gamma": w.gamma,
            "se.layers": s.n_blstm_layers, "se.hidden_units": s.hidden_units,
            "se.mask_activation": s.mask_activation, "se.phase": s.phase_mode, "se.dropout": s.dropout,
            "asr.encoder_layers": a.n_encoder_layers, "asr.decoder_layers": a.n_decoder_layers,
            "asr.d_model": a.d_model, "asr.heads": a.n_heads, "asr.ff_hidden": a.ff_hidden,
            "asr.kernel_size": a.kernel_size,
            "corpus.dir": self.corpus_dir, "corpus.train": self.train_manifest,
            "corpus.valid": self.valid_manifest, "corpus.test": self.test_manifest,
            "run.dir": self.run_dir,
        }

    @classmethod
    def from_flat(cls, flat):
        flat = dict(flat)
        unknown = set(flat) - set(cls().to_flat())
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        d = {**cls().to_flat(), **flat}

        def num(key, typ):
            v = d[key]
            return None if v is None or v == "" else typ(v)

        vocab = Vocabulary()
        corpus_dir = d["corpus.dir"]
        if corpus_dir and os.path.exists(os.path.join(corpus_dir, "vocab.txt")):
            vocab = Vocabulary.load(os.path.join(corpus_dir, "vocab.txt"))
        weights = LossWeights(num("weights.lambda", float), num("weights.beta", float),
                              num("weights.gamma", float))
        se = SeConfig(n_blstm_layers=num("se.layers", int), hidden_units=num("se.hidden_units", int),
                      mask_activation=d["se.mask_activation"], phase_mode=d["se.phase"],
                      dropout=num("se.dropout", float))
        asr = AsrConfig(n_encoder_layers=num("asr.encoder_layers", int),
                        n_decoder_layers=num("asr.decoder_layers", int),
                        d_model=num("asr.d_model", int), n_heads=num("asr.heads", int),
                        ff_hidden=num("asr.ff_hidden", int), kernel_size=num("asr.kernel_size", int),
                        ctc_weight=weights.lam, vocab=vocab)
        return cls(mode=d["train.mode"], weights=weights, se=se, asr=asr, lr=num("train.lr", float),
                   batch_size=num("train.batch_size", int), steps=num("train.steps", int),
                   se_steps=num("train.se_steps", int), seed=num("train.seed", int),
                   speed_perturb=_bool(d["train.speed_perturb"]), grad_clip=num("train.grad_clip", float),
                   valid_every=num("train.valid_every", int), warmup=num("train.warmup", int),
                   workers=num("train.workers", int), target_cer=num("train.target_cer", float),
                   corpus_dir=corpus_dir or None, train_manifest=d["corpus.train"] or None,
                   valid_manifest=d["corpus.valid"] or None, test_manifest=d["corpus.test"] or None,
                   run_dir=d["run.dir"] or None)

    def replace(self, **overrides):
        flat = self.to_flat()
        flat.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.from_flat(flat)


def _bool(v):
    if isinstance(v, bool):
        return v
    if v is None:
        return False
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise InvalidInputError(f"not a boolean: {v!r}")


def parse_config_text(text):
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    flat = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {n}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise InvalidInputError(f"line {n}: key {key!r} lacks a section")
        flat[key] = None if value.lower() in ("none", "null") else value
    return flat


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        flat = parse_config_text(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    for key in ("corpus.dir", "corpus.train", "corpus.valid", "corpus.test", "run.dir"):
        if flat.get(key) and not os.path.isabs(flat[key]):
            flat[key] = os.path.join(base, flat[key])
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_flat(flat)


def format_config(flat):
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in flat.items())


# --- training loop -----------------------------------------------------------------

@dataclass
class TrainResult:
    system: JointSystem
    reports: list
    best_cer: float | None
    best_step: int | None
    checkpoint: str | None
    steps_run: int


class BatchSchedule:
    """Deterministic epoch-shuffled batches: batch ``k`` depends only on (seed, k)."""

    def __init__(self, n, batch_size, seed):
        self.n, self.batch_size, self.seed = n, min(batch_size, n), seed
        self.per_epoch = max(1, n // self.batch_size)

    def indices(self, step):
        epoch, k = divmod(step, self.per_epoch)
        perm = np.random.default_rng([self.seed, 101, epoch]).permutation(self.n)
        return perm[k * self.batch_size:(k + 1) * self.batch_size]


def _lr_at(cfg, step):
    if cfg.warmup <= 0:
        return cfg.lr
    s = step + 1
    return cfg.lr * min(s / cfg.warmup, np.sqrt(cfg.warmup / s))


def character_error_rate(refs, hyps):
    from .evaluation import corpus_cer

    return corpus_cer(refs, hyps)


class Trainer:
    """Runs one :class:`TrainConfig`; artifacts go under ``cfg.run_dir`` when set."""

    def __init__(self, cfg, train_utts, valid_utts=None, mvn=None, log_fn=None):
        self.cfg = cfg
        self.mode = TrainingMode.parse(cfg.mode)
        self.weights = cfg.weights
        self.train_utts = train_utts
        self.valid_utts = valid_utts or []
        if mvn is None:
            mvn = compute_mvn([u.noisy_logmel for u in train_utts if "-sp" not in u.id])
        se_cfg = cfg.se if self.mode.uses_se else None
        self.system = JointSystem(cfg.asr, se_cfg, mvn, seed=cfg.seed)
        self.log_fn = log_fn
        self.reports = []
        self.step = 0
        self.stage = "se" if self.mode is TrainingMode.DISJOINT else "main"
        self.optimizer = self._make_optimizer()
        self._frozen_feats = None
        self.best_cer, self.best_step = None, None

    def _make_optimizer(self):
        if self.stage == "se":
            params = self.system.se_params()
        elif self.mode in (TrainingMode.BASELINE, TrainingMode.DISJOINT):
            params = self.system.asr_params()
        else:
            params = self.system.all_params()
        return Adam(params, lr=self.cfg.lr)

    @property
    def se_steps(self):
        if self.mode is not TrainingMode.DISJOINT:
            return 0
        return self.cfg.steps if self.cfg.se_steps is None else self.cfg.se_steps

    @property
    def total_steps(self):
        return self.se_steps + self.cfg.steps

    def _paths(self):
        run = self.cfg.run_dir
        if not run:
            return None
        os.makedirs(os.path.join(run, "ckpt"), exist_ok=True)
        return {"config": os.path.join(run, "config.resolved"), "metrics": os.path.join(run, "metrics.jsonl"),
                "best": os.path.join(run, "ckpt", "best.ckpt"), "last": os.path.join(run, "ckpt", "last.ckpt")}

    def compute_gradients(self, batch):
        """Loss value, gradients aligned with ``self.optimizer.params``, report parts."""
        mode = self.mode
        if self.stage == "se":
            loss, grads, parts = se_only_gradients(self.system, batch)
            return loss.item(), grads, parts
        if mode is TrainingMode.BASELINE:
            loss, grads, parts = asr_only_gradients(self.system, batch, self.weights,
                                                    self.system.normalize(batch.noisy_logmel))
            return loss.item(), grads, parts
        if mode is TrainingMode.DISJOINT:
            with no_grad():
                self.system.se.train(False)
                feats = Tensor(self.system.asr_input(batch).data)
            loss, grads, parts = asr_only_gradients(self.system, batch, self.weights, feats)
            return loss.item(), grads, parts
        if mode is TrainingMode.DC_MTJL:
            return dc_mtjl_gradients(self.system, batch, self.weights)
        loss, grads, parts = mtjl_gradients(self.system, batch, self.weights, mode)
        return loss.item(), grads, parts

    def _group_norms(self, grads):
        params = self.optimizer.params
        se_ids = {id(p) for p in self.system.se_params()}
        se = [g for p, g in zip(params, grads) if id(p) in se_ids]
        asr = [g for p, g in zip(params, grads) if id(p) not in se_ids]
        return (global_norm(se) if se else None), (global_norm(asr) if asr else None)

    def train_step(self):
        if self.mode is TrainingMode.DISJOINT and self.step == self.se_steps and self.stage == "se":
            self.stage = "main"
            self.optimizer = self._make_optimizer()
        sched_step = self.step if self.stage == "se" else self.step - self.se_steps
        idx = BatchSchedule(len(self.train_utts), self.cfg.batch_size, self.cfg.seed).indices(sched_step)
        batch = make_batch([self.train_utts[i] for i in idx])
        self.system.train(True)
        if self.system.se is not None:
            self.system.se.rng = np.random.default_rng([self.cfg.seed, 202, self.step])
        t0 = time.perf_counter()
        loss, grads, parts = self.compute_gradients(batch)
        n_se, n_asr = self._group_norms(grads)
        lr = _lr_at(self.cfg, self.optimizer.step_count)
        report = StepReport(self.step + 1, self.mode.value if self.stage == "main" else "disjoint-se",
                            float(loss), grad_norm_se=n_se, grad_norm_asr=n_asr, lr=lr,
                            **{k: v for k, v in parts.items() if k in StepReport.__dataclass_fields__})
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericDivergence(f"non-finite loss at step {self.step + 1}", report)
        grads, _ = clip_by_global_norm(grads, self.cfg.grad_clip)
        self.optimizer.step(grads, lr=lr)
        report.elapsed_s = time.perf_counter() - t0
        self.step += 1
        return report

    def validate(self):
        if not self.valid_utts:
            return None
        hyps = self.system.transcribe_utterances(self.valid_utts)
        return character_error_rate([u.transcript for u in self.valid_utts], hyps)

    def run(self, steps=None):
        paths = self._paths()
        total = self.total_steps if steps is None else min(self.total_steps, self.step + steps)
        metrics = open(paths["metrics"], "a", encoding="utf-8") if paths else None
        try:
            if paths and self.step == 0:
                with open(paths["config"], "w", encoding="utf-8") as fh:
                    fh.write(format_config(self.cfg.to_flat()))
                metrics.write(json.dumps({"config": self.cfg.to_flat()}) + "\n")
            while self.step < total:
                try:
                    report = self.train_step()
                except NumericDivergence as exc:
                    if metrics:
                        metrics.write(exc.report.to_json() + "\n")
                    raise
                in_main = self.stage == "main"
                due = self.cfg.valid_every and (self.step % self.cfg.valid_every == 0 or self.step == total)
                if in_main and due and self.valid_utts:
                    cer = self.validate()
                    report.valid_cer = cer
                    if self.best_cer is None or cer < self.best_cer:
                        self.best_cer, self.best_step = cer, self.step
                        if paths:
                            self.save(paths["best"])
                self.reports.append(report)
                if metrics:
                    metrics.write(report.to_json() + "\n")
                    metrics.flush()
                if self.log_fn:
                    self.log_fn(report)
                if (self.cfg.target_cer is not None and report.valid_cer is not None
                        and report.valid_cer <= self.cfg.target_cer):
                    break
            if paths:
                self.save(paths["last"])
        finally:
            if metrics:
                metrics.close()
        ckpt = None
        if paths:
            ckpt = paths["best"] if os.path.exists(paths["best"]) else paths["last"]
        return TrainResult(self.system, self.reports, self.best_cer, self.best_step, ckpt, self.step)

    def save(self, path):
        self.system.save(path, self.optimizer, {"step": self.step, "stage": self.stage,
                                                "train_config": self.cfg.to_flat()})

    def resume(self, path):
        """Restore parameters, Adam state and step counter from a checkpoint."""
        arrays, meta = load_checkpoint(path)
        self.system.load_arrays(arrays)
        self.step = int(meta["step"])
        self.stage = meta.get("stage", "main")
        self.optimizer = self._make_optimizer()
        if "adam_step" in meta:
            self.optimizer.load_state_arrays(arrays, meta["adam_step"])
        return self


def load_split(cfg, split, speed_factors=None):
    path = cfg.manifest(split)
    if not path:
        return []
    pairs = load_pairs(path)
    return prepare_pairs(pairs, cfg.asr.vocab, cfg.se.stft, cfg.asr.n_mels, speed_factors)


def train(cfg, log_fn=None, train_utts=None, valid_utts=None, resume_from=None):
    """Train per ``cfg``; reads the corpus manifests unless utterances are given."""
    factors = SPEED_FACTORS if cfg.speed_perturb else None
    if train_utts is None:
        train_utts = load_split(cfg, "train", factors)
        if not train_utts:
            raise InvalidInputError("no training manifest configured")
    if valid_utts is None:
        valid_utts = load_split(cfg, "valid")
    trainer = Trainer(cfg, train_utts, valid_utts, log_fn=log_fn)
    if resume_from:
        trainer.resume(resume_from)
    return trainer.run()


def disjoint_train(train_utts, se_cfg, asr_cfg, steps=200, se_steps=None, weights=None, seed=0,
                   batch_size=32, lr=0.002):
    """SE on the SE loss alone, then ASR on the frozen SE's enhanced features."""
    cfg = TrainConfig(mode="disjoint", weights=weights or LossWeights(), se=se_cfg, asr=asr_cfg,
                      steps=steps, se_steps=se_steps, seed=seed, batch_size=batch_size, lr=lr,
                      valid_every=0)
    trainer = Trainer(cfg, train_utts)
    trainer.run()
    return trainer


def frame_valid(batch):
    return frame_mask(batch.frame_lengths, batch.analysis.real.shape[1])
