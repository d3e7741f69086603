"""Time-frequency masking speech enhancement front-end.

A BLSTM stack reads compressed noisy magnitudes and predicts a real,
non-negative gain per frame and bin. The masked spectrum feeds the ASR
back-end through one of two feature paths:

* ``discard``: log-mel of ``|X * M|**2`` (noisy phase never leaves the
  spectral domain),
* ``preserve``: resynthesize ``istft(X * M)``, re-analyze it, and take the
  log-mel of the re-analyzed power spectrum.

Both paths are tape operations, so ASR gradients reach the mask network.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad
from .errors import InvalidInputError
from .layers import (BLSTM, ActivationKind, Linear, MetaACON, Module, activation, dropout,
                     frame_mask, zero_padding)
from .signal import (ComplexSpectrogram, MagnitudeSpectrogram, MelFeatures, StftParams, Waveform,
                     istft_tensor, logmel_tensor, stft_tensor)


class PhaseMode(str, enum.Enum):
    DISCARD = "discard"
    PRESERVE = "preserve"


@dataclass
class SeConfig:
    n_blstm_layers: int = 2
    hidden_units: int = 128
    mask_activation: str = "relu"
    phase_mode: str = "preserve"
    dropout: float = 0.1
    mask_bias_init: float = 1.0
    n_mels: int = 80
    stft: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        if self.n_blstm_layers < 1:
            raise InvalidInputError("n_blstm_layers must be >= 1")
        if self.hidden_units < 8:
            raise InvalidInputError("hidden_units must be >= 8")
        self.mask_activation = ActivationKind.parse(self.mask_activation).value
        self.phase_mode = PhaseMode(self.phase_mode).value

    def to_dict(self):
        return {"n_blstm_layers": self.n_blstm_layers, "hidden_units": self.hidden_units,
                "mask_activation": self.mask_activation, "phase_mode": self.phase_mode,
                "dropout": self.dropout, "mask_bias_init": self.mask_bias_init,
                "n_mels": self.n_mels, "n_fft": self.stft.n_fft, "hop": self.stft.hop}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        stft = StftParams(d.pop("n_fft", 512), d.pop("hop", 128))
        return cls(stft=stft, **d)


@dataclass
class Mask:
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise InvalidInputError("mask entries must be non-negative")


@dataclass
class EnhancedOutput:
    masked_spec: ComplexSpectrogram
    enhanced_wave: Waveform | None
    features: MelFeatures


class MaskEstimator(Module):
    """BLSTM stack -> dropout -> linear -> mask activation -> clamp at 0."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        n_bins = cfg.stft.n_bins
        self.blstm = []
        dim = n_bins
        for _ in range(cfg.n_blstm_layers):
            self.blstm.append(BLSTM(dim, cfg.hidden_units, rng))
            dim = 2 * cfg.hidden_units
        self.proj = Linear(dim, n_bins, rng)
        self.proj.bias.data[:] = cfg.mask_bias_init
        self.acon = MetaACON(n_bins, rng) if cfg.mask_activation == "metaacon" else None
        self.rng = rng

    def __call__(self, noisy_mag, lengths=None):
        """Mask ``[B, T, K]`` from noisy magnitudes ``[B, T, K]``."""
        mag = noisy_mag.data if isinstance(noisy_mag, Tensor) else np.asarray(noisy_mag)
        if mag.ndim != 3 or mag.shape[-1] != self.cfg.stft.n_bins:
            raise InvalidInputError(f"expected [B, T, {self.cfg.stft.n_bins}] magnitudes, got {mag.shape}")
        h = Tensor(np.log1p(mag))
        for layer in self.blstm:
            h = layer(h, lengths)
        h = dropout(h, self.cfg.dropout, self.rng, self.training)
        raw = activation(self.proj(h), self.cfg.mask_activation, self.acon, lengths)
        return ops.relu(raw)


@dataclass
class NoisyAnalysis:
    """Constant STFT of a padded batch of noisy waveforms."""

    real: np.ndarray
    imag: np.ndarray
    mag: np.ndarray
    frame_lengths: np.ndarray


def pad_waves(waves):
    """Zero-pad 1-d arrays into ``[B, L_max]``; returns (batch, lengths)."""
    arrays = [getattr(w, "samples", w) for w in waves]
    lengths = np.array([len(a) for a in arrays])
    out = np.zeros((len(arrays), lengths.max()))
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out, lengths


def analyze(waves, params, dtype=np.float64):
    batch, lengths = pad_waves(waves)
    if lengths.min() < params.n_fft:
        raise InvalidInputError(f"waveform shorter than one window ({params.n_fft} samples)")
    real, imag = stft_tensor(Tensor(batch.astype(dtype)), params)
    frames = 1 + (lengths - params.n_fft) // params.hop
    valid = frame_mask(frames, real.shape[1])[..., None]
    r, i = real.data * valid, imag.data * valid
    return NoisyAnalysis(r, i, np.hypot(r, i), frames)


def masked_power(analysis, mask, phase_mode, params):
    """Power spectrum feeding the ASR features, as a function of the mask tensor."""
    mask = zero_padding(mask, analysis.frame_lengths)
    real = ops.mul(mask, Tensor(analysis.real))
    imag = ops.mul(mask, Tensor(analysis.imag))
    if PhaseMode(phase_mode) is PhaseMode.DISCARD:
        return ops.mul(ops.mul(mask, mask), Tensor(analysis.mag ** 2)), None
    wave = istft_tensor(real, imag, analysis.frame_lengths, params)
    re, im = stft_tensor(wave, params)
    return ops.add(ops.mul(re, re), ops.mul(im, im)), wave


def enhanced_features(analysis, mask, cfg):
    """Log-mel features ``[B, F, n_mels]`` (before MVN) and the resynthesized wave."""
    power, wave = masked_power(analysis, mask, cfg.phase_mode, cfg.stft)
    return logmel_tensor(power, cfg.n_mels), wave


def se_loss_tensor(mask, analysis, clean_mag):
    """Mean squared error between ``|X * M|`` and the clean magnitude over valid frames and bins."""
    if clean_mag.shape != analysis.mag.shape:
        raise InvalidInputError(f"clean magnitude shape {clean_mag.shape} != {analysis.mag.shape}")
    valid = frame_mask(analysis.frame_lengths, mask.shape[1])[..., None].astype(mask.dtype)
    diff = ops.mul(ops.sub(ops.mul(mask, Tensor(analysis.mag)), Tensor(clean_mag)), Tensor(valid))
    denom = float(analysis.frame_lengths.sum() * mask.shape[-1])
    return ops.mul(ops.sum(ops.mul(diff, diff)), 1.0 / denom)


def se_loss(masked_mag, clean_mag):
    a = getattr(masked_mag, "mag", masked_mag)
    b = getattr(clean_mag, "mag", clean_mag)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def estimate_mask(noisy_mag, net):
    """Inference-mode mask for one utterance's magnitude spectrogram."""
    mag = getattr(noisy_mag, "mag", noisy_mag)
    was_training = net.training
    net.eval()
    try:
        with no_grad():
            m = net(mag[None])
    finally:
        net.train(was_training)
    return Mask(m.data[0].astype(np.float64))


def enhance(noisy, net, cfg=None, mask=None):
    """Enhance one waveform; ``mask`` overrides the network's estimate."""
    cfg = cfg or net.cfg
    analysis = analyze([noisy], cfg.stft)
    if mask is None:
        mask = estimate_mask(analysis.mag[0], net).values
    mask_t = Tensor(np.asarray(getattr(mask, "values", mask), dtype=np.float64)[None])
    with no_grad():
        feats, wave = enhanced_features(analysis, mask_t, cfg)
    masked = ComplexSpectrogram(analysis.real[0] * mask_t.data[0], analysis.imag[0] * mask_t.data[0], cfg.stft)
    rate = getattr(noisy, "sample_rate", 16000)
    enhanced = None
    if wave is not None:
        samples = np.zeros(len(getattr(noisy, "samples", noisy)))
        n = min(samples.size, wave.shape[1])
        samples[:n] = wave.data[0, :n]
        enhanced = Waveform(samples, rate)
    return EnhancedOutput(masked, enhanced, MelFeatures(feats.data[0]))


def masked_magnitude(spec):
    return MagnitudeSpectrogram(np.hypot(spec.real, spec.imag))
