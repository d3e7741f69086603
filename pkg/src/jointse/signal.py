"""DSP kernels: STFT/ISTFT, real masking, log-mel features, MVN, speed
perturbation and 16-bit PCM WAV I/O.

Plain functions operate on numpy arrays wrapped in small dataclasses.
``stft_tensor``/``istft_tensor``/``logmel_tensor`` are the same transforms
as tape nodes, so an enhancement chain can be differentiated end to end.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import ops
from .autodiff.tensor import Tensor, make_node
from .errors import InvalidInputError, InvalidStateError

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
MVN_EPS = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidInputError("waveform must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 512
    hop: int = 128

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop <= 0 or self.hop > self.n_fft:
            raise InvalidInputError("need 0 < hop <= n_fft")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    @property
    def window(self):
        return hann(self.n_fft)

    def n_frames(self, n_samples):
        return 1 + (n_samples - self.n_fft) // self.hop

    def n_samples(self, n_frames):
        return (n_frames - 1) * self.hop + self.n_fft


@dataclass
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    params: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise InvalidInputError("real and imag must be equal-shape [frames x bins] matrices")
        if self.real.shape[1] != self.params.n_bins:
            raise InvalidInputError(f"expected {self.params.n_bins} bins, got {self.real.shape[1]}")

    @property
    def shape(self):
        return self.real.shape


@dataclass
class MagnitudeSpectrogram:
    mag: np.ndarray


@dataclass
class MelFeatures:
    feats: np.ndarray

    @property
    def n_mels(self):
        return self.feats.shape[1]


@dataclass
class MvnStats:
    mean: np.ndarray
    std: np.ndarray


def hann(n):
    """Periodic Hann window; satisfies COLA for hops of n/2, n/4, ..."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


# --- framing helpers shared by the numpy and tape versions -----------------

def _frames(x, n_fft, hop):
    return sliding_window_view(x, n_fft, axis=-1)[..., ::hop, :]


def _overlap_add(frames, hop):
    """Sum ``frames[..., F, N]`` at offsets ``f * hop``."""
    *lead, n_frames, n = frames.shape
    length = (n_frames - 1) * hop + n
    if n % hop == 0:
        r = n // hop
        out = np.zeros(tuple(lead) + (n_frames - 1 + r, hop), dtype=frames.dtype)
        chunks = frames.reshape(tuple(lead) + (n_frames, r, hop))
        for j in range(r):
            out[..., j:j + n_frames, :] += chunks[..., :, j, :]
        return out.reshape(tuple(lead) + (length,))
    out = np.zeros(tuple(lead) + (length,), dtype=frames.dtype)
    for f in range(n_frames):
        out[..., f * hop:f * hop + n] += frames[..., f, :]
    return out


def _window_sum(params, frame_counts, n_total_frames):
    """Per-sequence sum of squared windows over the first ``frame_counts[b]`` frames."""
    w2 = params.window ** 2
    valid = (np.arange(n_total_frames)[None, :] < np.asarray(frame_counts)[:, None])
    return _overlap_add(valid[:, :, None] * w2, params.hop)


def _normalizer(wsum):
    # sample 0 (and anything past a sequence's last frame) has no window support
    tiny = np.finfo(np.float64).tiny * 1e10
    return np.where(wsum > tiny, 1.0 / np.where(wsum > tiny, wsum, 1.0), 0.0)


# --- numpy kernels ----------------------------------------------------------

def stft(w, p=None):
    """One-sided STFT with a periodic Hann window and no centering."""
    p = p or StftParams()
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size < p.n_fft:
        raise InvalidInputError(f"signal of {x.size} samples is shorter than one window ({p.n_fft})")
    spec = np.fft.rfft(_frames(x, p.n_fft, p.hop) * p.window, axis=-1)
    return ComplexSpectrogram(spec.real.copy(), spec.imag.copy(), p)


def istft(s, sample_rate=SAMPLE_RATE):
    """Weighted overlap-add inverse of :func:`stft`."""
    p = s.params
    frames = np.fft.irfft(s.real + 1j * s.imag, n=p.n_fft, axis=-1) * p.window
    wsum = _window_sum(p, [s.real.shape[0]], s.real.shape[0])[0]
    if np.any(wsum[p.n_fft - p.hop: len(wsum) - p.n_fft + p.hop] <= 0):
        raise InvalidStateError("zero window sum inside the signal; parameters are not COLA")
    return Waveform(_overlap_add(frames, p.hop) * _normalizer(wsum), sample_rate)


def apply_mask(s, m):
    """Scale every bin by a non-negative real gain; phase is untouched."""
    m = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if m.shape != s.real.shape:
        raise InvalidInputError(f"mask shape {m.shape} != spectrogram shape {s.real.shape}")
    if np.any(m < 0):
        raise InvalidInputError("mask entries must be non-negative")
    return ComplexSpectrogram(s.real * m, s.imag * m, s.params)


def magnitude(s):
    return MagnitudeSpectrogram(np.hypot(s.real, s.imag))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_fft=512, n_mels=80, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=None):
    """Triangular HTK-scale filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


_FB_CACHE = {}


def _cached_filterbank(n_bins, n_mels, sample_rate):
    key = (n_bins, n_mels, sample_rate)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(2 * (n_bins - 1), n_mels, sample_rate)
    return _FB_CACHE[key]


def logmel(m, n_mels=80, sample_rate=SAMPLE_RATE):
    """Natural-log mel energies of the power spectrum ``|m|**2``."""
    mag = getattr(m, "mag", m)
    if mag.shape[-1] != 257:
        raise InvalidInputError(f"log-mel expects 257 bins, got {mag.shape[-1]}")
    fb = _cached_filterbank(mag.shape[-1], n_mels, sample_rate)
    return MelFeatures(np.log(np.maximum((mag * mag) @ fb.T, LOG_FLOOR)))


def compute_mvn(corpus):
    """Global per-dimension mean and standard deviation over all frames."""
    feats = [getattr(f, "feats", f) for f in corpus]
    if not feats:
        raise InvalidInputError("MVN statistics need at least one utterance")
    stacked = np.concatenate(feats, axis=0)
    return MvnStats(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), MVN_EPS))


def apply_mvn(f, stats):
    feats = getattr(f, "feats", f)
    return MelFeatures((feats - stats.mean) / stats.std)


SPEED_FACTORS = (0.9, 1.0, 1.1)


def speed_perturb(w, factor):
    """Resample by linear interpolation to ``round(len / factor)`` samples."""
    if not 0.8 <= factor <= 1.25:
        raise InvalidInputError(f"speed factor {factor} outside [0.8, 1.25]")
    x = w.samples
    n_out = int(round(x.size / factor))
    pos = np.arange(n_out) * factor
    return Waveform(np.interp(pos, np.arange(x.size), x), w.sample_rate)


# --- tape versions ----------------------------------------------------------

def stft_tensor(wave, p=None):
    """STFT of ``wave[B, L]``; returns ``(real, imag)`` tensors ``[B, F, K]``."""
    p = p or StftParams()
    if wave.shape[-1] < p.n_fft:
        raise InvalidInputError("signal shorter than one window")
    win = p.window.astype(wave.dtype)
    spec = np.fft.rfft(_frames(wave.data, p.n_fft, p.hop) * win, axis=-1)
    packed = np.stack([spec.real, spec.imag], axis=-1).astype(wave.dtype)
    n = p.n_fft
    length = wave.shape[-1]

    def bw(g):
        z = g[..., 0] + 1j * g[..., 1]
        z[..., 1:-1] *= 0.5
        gframes = np.fft.irfft(z, n=n, axis=-1) * n * win
        gw = _overlap_add(gframes, p.hop)
        out = np.zeros(wave.shape, dtype=wave.dtype)
        out[..., :gw.shape[-1]] = gw
        return (out,)

    node = make_node(packed, (wave,), bw)
    return node[..., 0], node[..., 1]


def istft_tensor(real, imag, frame_counts=None, p=None):
    """Batched ISTFT of ``real/imag[B, F, K]``; sequence ``b`` uses its first
    ``frame_counts[b]`` frames and is zero beyond them."""
    p = p or StftParams()
    b, n_frames, _ = real.shape
    counts = np.full(b, n_frames) if frame_counts is None else np.asarray(frame_counts)
    valid = (np.arange(n_frames)[None, :] < counts[:, None])[..., None]
    win = p.window.astype(real.dtype)
    norm = _normalizer(_window_sum(p, counts, n_frames)).astype(real.dtype)
    frames = np.fft.irfft(real.data + 1j * imag.data, n=p.n_fft, axis=-1) * win * valid
    out = _overlap_add(frames, p.hop) * norm
    scale = np.full(p.n_bins, 2.0 / p.n_fft)
    scale[0] = scale[-1] = 1.0 / p.n_fft

    def bw(g):
        gf = _frames(g * norm, p.n_fft, p.hop) * win * valid
        z = np.fft.rfft(gf, axis=-1) * scale
        return z.real.astype(real.dtype), z.imag.astype(real.dtype)

    return make_node(out.astype(real.dtype), (real, imag), bw)


def logmel_tensor(power, n_mels=80, sample_rate=SAMPLE_RATE):
    """log(max(power @ melfb.T, floor)) on a ``[..., 257]`` power tensor."""
    fb = _cached_filterbank(power.shape[-1], n_mels, sample_rate).T.astype(power.dtype)
    return ops.log(ops.clamp_min(ops.matmul(power, Tensor(fb)), LOG_FLOOR))


# --- WAV I/O ----------------------------------------------------------------

def read_wav(path):
    """Read mono 16-bit PCM; samples are ``int16 / 32768``."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: only mono 16-bit PCM is supported")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def write_wav(path, w):
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    rate = w.sample_rate if isinstance(w, Waveform) else SAMPLE_RATE
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(rate))
        fh.writeframes(pcm.tobytes())
