"""Synthetic paired clean/degraded corpus emulating a UHF radio channel.

Clean "speech" is a sequence of 120 ms two-formant harmonic tones, one per
character, so a small recognizer can learn it. The degradation chain is
band-pass -> soft clip -> optional narrowband interference -> white noise
at a fixed SNR -> peak limiting.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import InvalidInputError
from .signal import SAMPLE_RATE, Waveform, read_wav, write_wav
from .vocab import DEFAULT_ALPHABET, Vocabulary

SEGMENT_S = 0.12
CROSSFADE_S = 0.01
CLEAN_PEAK = 0.3
OUTPUT_PEAK = 0.95
SPLITS = ("train", "valid", "test")


@dataclass
class DegradeConfig:
    snr_db: float = 0.0
    band: tuple | None = (300.0, 3400.0)
    clip_drive: float = 2.0
    interference_prob: float = 0.3
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.band is not None:
            lo, hi = self.band
            if not 0 < lo < hi < self.sample_rate / 2:
                raise InvalidInputError("band edges must satisfy 0 < low < high < Nyquist")
        if self.clip_drive < 1.0:
            raise InvalidInputError("clip_drive must be >= 1")
        if not 0.0 <= self.interference_prob <= 1.0:
            raise InvalidInputError("interference_prob must lie in [0, 1]")


@dataclass
class UtterancePair:
    id: str
    clean: Waveform
    noisy: Waveform
    transcript: str
    snr_db: float = math.nan

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise InvalidInputError(f"{self.id}: clean and noisy lengths differ")
        if not self.transcript:
            raise InvalidInputError(f"{self.id}: empty transcript")


@dataclass
class ManifestRecord:
    id: str
    clean_path: str
    noisy_path: str
    transcript: str
    duration_s: float


def char_formants(index):
    """Deterministic (F1, F2) pair in Hz for the ``index``-th vocabulary symbol."""
    f1 = 400.0 + 60.0 * (index % 10) + 13.0 * (index // 10)
    f2 = 1400.0 + 160.0 * ((7 * index) % 10) + 37.0 * (index // 10)
    return f1, f2


def _segment(f1, f2, f0, rng, n, sr):
    t = np.arange(n) / sr
    ph = rng.uniform(0, 2 * np.pi, size=2)
    x = np.sin(2 * np.pi * f1 * t + ph[0]) + 0.7 * np.sin(2 * np.pi * f2 * t + ph[1])
    harmonics = np.arange(1, int(3400 // f0) + 1) * f0
    env = np.exp(-0.5 * ((harmonics - f1) / 90.0) ** 2) + 0.7 * np.exp(-0.5 * ((harmonics - f2) / 120.0) ** 2)
    hph = rng.uniform(0, 2 * np.pi, size=harmonics.size)
    x += 0.3 * (env[:, None] * np.sin(2 * np.pi * harmonics[:, None] * t + hph[:, None])).sum(axis=0)
    ramp = int(0.015 * sr)
    shape = np.ones(n)
    shape[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    shape[-ramp:] = shape[:ramp][::-1]
    return x * shape


def synth_clean(transcript, rng, vocab=None, sample_rate=SAMPLE_RATE):
    """Render each character as a 120 ms tone; 10 ms linear cross-fades between them."""
    vocab = vocab or Vocabulary()
    if not transcript:
        raise InvalidInputError("empty transcript")
    index = {s: i for i, s in enumerate(vocab.symbols)}
    missing = [c for c in transcript if c not in index]
    if missing:
        raise InvalidInputError(f"characters {missing!r} not in vocabulary")
    seg = int(round(SEGMENT_S * sample_rate))
    fade = int(round(CROSSFADE_S * sample_rate))
    total = len(transcript) * seg - (len(transcript) - 1) * fade
    out = np.zeros(total)
    f0 = rng.uniform(110.0, 150.0)
    ramp_in = np.linspace(0.0, 1.0, fade, endpoint=False)
    for k, ch in enumerate(transcript):
        x = _segment(*char_formants(index[ch]), f0, rng, seg, sample_rate)
        if k > 0:
            x[:fade] *= ramp_in
        if k < len(transcript) - 1:
            x[-fade:] *= ramp_in[::-1]
        start = k * (seg - fade)
        out[start:start + seg] += x
    out *= CLEAN_PEAK / np.max(np.abs(out))
    return Waveform(out, sample_rate)


def expected_length(n_chars, sample_rate=SAMPLE_RATE):
    seg = int(round(SEGMENT_S * sample_rate))
    fade = int(round(CROSSFADE_S * sample_rate))
    return n_chars * seg - (n_chars - 1) * fade


BANDPASS_TAPS = 511


def bandpass(x, band, sample_rate=SAMPLE_RATE):
    """Linear-phase windowed-sinc band-pass, centered so output stays sample-aligned."""
    taps = sps.firwin(BANDPASS_TAPS, band, pass_zero=False, fs=sample_rate)
    return sps.oaconvolve(x, taps, mode="same")


def degrade(clean, cfg, rng, return_reference=False):
    """Simulate the radio channel; optionally also return the pre-noise signal.

    The white noise is scaled against the pre-noise signal (band-passed,
    clipped, interference added) so the realized SNR equals ``cfg.snr_db``.
    Peak limiting rescales signal and noise together.
    """
    x = clean.samples
    sr = clean.sample_rate
    if cfg.band is not None:
        x = bandpass(x, cfg.band, sr)
    x = np.tanh(cfg.clip_drive * x) / cfg.clip_drive
    if rng.random() < cfg.interference_prob:
        lo, hi = cfg.band if cfg.band is not None else (100.0, sr / 2 - 100.0)
        freq = rng.uniform(lo, hi)
        amp = 0.5 * np.sqrt(np.mean(x ** 2)) * np.sqrt(2.0)
        x = x + amp * np.sin(2 * np.pi * freq * np.arange(x.size) / sr + rng.uniform(0, 2 * np.pi))
    reference = x
    if np.isfinite(cfg.snr_db):
        noise = rng.standard_normal(x.size)
        p_sig = np.mean(x ** 2)
        noise *= np.sqrt(p_sig / (np.mean(noise ** 2) * 10.0 ** (cfg.snr_db / 10.0)))
        x = x + noise
    peak = np.max(np.abs(x))
    gain = OUTPUT_PEAK / peak if peak > OUTPUT_PEAK else 1.0
    noisy = Waveform(x * gain, sr)
    if return_reference:
        return noisy, Waveform(reference * gain, sr)
    return noisy


def realized_snr(noisy, reference):
    y, s = getattr(noisy, "samples", noisy), getattr(reference, "samples", reference)
    return 10.0 * np.log10(np.sum(s ** 2) / np.sum((y - s) ** 2))


def tokenize(text, vocab=None):
    return (vocab or Vocabulary()).tokenize(text)


def detokenize(tokens, vocab=None):
    return (vocab or Vocabulary()).detokenize(tokens)


# --- corpus generation ----------------------------------------------------------

def sample_transcripts(counts, seed, alphabet=DEFAULT_ALPHABET, min_len=3, max_len=10):
    """Unique random strings, split into disjoint groups of the given sizes."""
    rng = np.random.default_rng([seed, 7919])
    total = sum(counts)
    seen, ordered = set(), []
    while len(ordered) < total:
        n = int(rng.integers(min_len, max_len + 1))
        s = "".join(rng.choice(list(alphabet), size=n))
        if s not in seen:
            seen.add(s)
            ordered.append(s)
    groups, start = [], 0
    for c in counts:
        groups.append(ordered[start:start + c])
        start += c
    return groups


def utterance_rng(seed, split_index, index):
    return np.random.default_rng([seed, split_index, index])


def make_pair(uid, transcript, cfg, rng, vocab=None):
    clean = synth_clean(transcript, rng, vocab, cfg.sample_rate)
    noisy, ref = degrade(clean, cfg, rng, return_reference=True)
    return UtterancePair(uid, clean, noisy, transcript, realized_snr(noisy, ref))


def _generate_one(job):
    out_dir, split, split_index, i, transcript, cfg, seed, symbols = job
    uid = f"{split}-{i:05d}"
    pair = make_pair(uid, transcript, cfg, utterance_rng(seed, split_index, i), Vocabulary(symbols))
    wav_dir = os.path.join(out_dir, split)
    clean_rel = os.path.join(split, f"{uid}_clean.wav")
    noisy_rel = os.path.join(split, f"{uid}_noisy.wav")
    os.makedirs(wav_dir, exist_ok=True)
    write_wav(os.path.join(out_dir, clean_rel), pair.clean)
    write_wav(os.path.join(out_dir, noisy_rel), pair.noisy)
    rec = ManifestRecord(uid, clean_rel, noisy_rel, transcript, round(pair.clean.duration, 6))
    return rec, pair.snr_db


@dataclass
class CorpusSummary:
    manifests: dict
    counts: dict
    snr_db: list = field(default_factory=list)


def generate_corpus(out_dir, n_train=200, n_valid=20, n_test=20, cfg=None, seed=0,
                    vocab=None, workers=1):
    """Write paired WAVs, one JSON-lines manifest per split, and ``vocab.txt``."""
    cfg = cfg or DegradeConfig(seed=seed)
    vocab = vocab or Vocabulary()
    os.makedirs(out_dir, exist_ok=True)
    counts = (n_train, n_valid, n_test)
    groups = sample_transcripts(counts, seed, "".join(vocab.symbols))
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    manifests, snrs = {}, []
    for split_index, (split, texts) in enumerate(zip(SPLITS, groups)):
        jobs = [(out_dir, split, split_index, i, t, cfg, seed, vocab.symbols) for i, t in enumerate(texts)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_generate_one, jobs))
        else:
            results = [_generate_one(j) for j in jobs]
        path = os.path.join(out_dir, f"{split}.jsonl")
        write_manifest(path, [r for r, _ in results])
        manifests[split] = path
        snrs.extend(s for _, s in results)
    return CorpusSummary(manifests, dict(zip(SPLITS, counts)), snrs)


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "clean_path": r.clean_path, "noisy_path": r.noisy_path,
                                 "transcript": r.transcript, "duration_s": r.duration_s}) + "\n")


def read_manifest(path):
    """Records with paths resolved against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    records, ids = [], set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["id"] in ids:
                raise InvalidInputError(f"duplicate id {d['id']} in {path}")
            ids.add(d["id"])
            rec = ManifestRecord(d["id"], os.path.join(base, d["clean_path"]),
                                 os.path.join(base, d["noisy_path"]), d["transcript"],
                                 float(d["duration_s"]))
            for p in (rec.clean_path, rec.noisy_path):
                if not os.path.exists(p):
                    raise FileNotFoundError(p)
            records.append(rec)
    return records


def load_pairs(path):
    return [UtterancePair(r.id, read_wav(r.clean_path), read_wav(r.noisy_path), r.transcript)
            for r in read_manifest(path)]
