"""Input coercion for the estimator API."""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .signal import SAMPLE_RATE, Waveform


def check_waveforms(X, min_samples=512, name="X"):
    """Coerce a sequence of 1-d arrays or :class:`Waveform` objects to Waveforms."""
    if isinstance(X, (Waveform, np.ndarray)) and getattr(X, "ndim", 1) == 1:
        raise InvalidInputError(f"{name} must be a sequence of waveforms, not a single waveform")
    out = []
    for i, x in enumerate(X):
        w = x if isinstance(x, Waveform) else Waveform(np.asarray(x, dtype=np.float64), SAMPLE_RATE)
        if w.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(f"{name}[{i}]: sample rate {w.sample_rate} != {SAMPLE_RATE}")
        if len(w) < min_samples:
            raise InvalidInputError(f"{name}[{i}]: {len(w)} samples, need at least {min_samples}")
        out.append(w)
    if not out:
        raise InvalidInputError(f"{name} is empty")
    return out


def check_transcripts(y, vocab, n=None):
    y = [str(t) for t in y]
    if n is not None and len(y) != n:
        raise InvalidInputError(f"got {len(y)} transcripts for {n} waveforms")
    for i, t in enumerate(y):
        vocab.tokenize(t) if t else _empty(i)
    return y


def _empty(i):
    raise InvalidInputError(f"transcript {i} is empty")


def check_pairs(noisy, clean):
    if clean is None:
        return None
    clean = check_waveforms(clean, name="clean")
    if len(clean) != len(noisy):
        raise InvalidInputError("clean and noisy counts differ")
    for i, (c, x) in enumerate(zip(clean, noisy)):
        if len(c) != len(x):
            raise InvalidInputError(f"pair {i}: clean and noisy lengths differ")
    return clean
