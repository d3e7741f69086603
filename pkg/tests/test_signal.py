import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointse.autodiff import Tensor
from jointse.errors import InvalidInputError
from jointse.signal import (LOG_FLOOR, ComplexSpectrogram, MagnitudeSpectrogram, StftParams,
                            Waveform, apply_mask, apply_mvn, compute_mvn, hann, hz_to_mel, istft,
                            istft_tensor, logmel, logmel_tensor, magnitude, mel_filterbank,
                            mel_to_hz, read_wav, speed_perturb, stft, stft_tensor, write_wav)


def naive_dft_frames(x, n_fft, hop):
    """Textbook DFT of each Hann-windowed frame, bins 0..n_fft/2."""
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    n_frames = 1 + (len(x) - n_fft) // hop
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    return np.stack([basis @ (x[f * hop:f * hop + n_fft] * win) for f in range(n_frames)])


def test_stft_matches_naive_dft(rng):
    p = StftParams(64, 16)
    x = rng.standard_normal(64 + 5 * 16 + 7)
    s = stft(Waveform(x), p)
    ref = naive_dft_frames(x, 64, 16)
    np.testing.assert_allclose(s.real, ref.real, atol=1e-10)
    np.testing.assert_allclose(s.imag, ref.imag, atol=1e-10)


def test_stft_shape_for_default_params(rng):
    s = stft(Waveform(rng.standard_normal(16000)))
    assert s.shape == (1 + (16000 - 512) // 128, 257)


def test_hann_is_periodic_and_cola_at_quarter_hop():
    w = hann(512)
    assert w[0] == 0.0
    assert w[256] == pytest.approx(1.0)
    ola = sum(np.roll(w ** 2, k * 128) for k in range(4))
    np.testing.assert_allclose(ola, 1.5, atol=1e-12)


def test_istft_inverts_stft_exactly_for_full_frames(rng):
    x = rng.standard_normal(512 + 40 * 128)
    y = istft(stft(Waveform(x)))
    np.testing.assert_allclose(y.samples[1:], x[1:], atol=1e-12)
    assert y.samples[0] == 0.0  # the periodic window is zero at sample 0


def test_tape_istft_matches_numpy_istft(rng):
    x = rng.standard_normal(512 + 6 * 128)
    s = stft(Waveform(x))
    out = istft_tensor(Tensor(s.real[None]), Tensor(s.imag[None])).data[0]
    np.testing.assert_allclose(out, istft(s).samples, atol=1e-12)


def test_tape_istft_zeroes_samples_past_each_sequence(rng):
    re, im = rng.standard_normal((2, 2, 5, 257))
    out = istft_tensor(Tensor(re), Tensor(im), np.array([5, 3])).data
    end = StftParams().n_samples(3)
    assert np.all(out[1, end:] == 0.0)
    assert np.any(out[1, :end] != 0.0)


def test_tape_stft_matches_numpy_stft(rng):
    x = rng.standard_normal((2, 1000))
    re, im = stft_tensor(Tensor(x))
    ref = stft(Waveform(x[1]))
    np.testing.assert_allclose(re.data[1], ref.real, atol=1e-12)
    np.testing.assert_allclose(im.data[1], ref.imag, atol=1e-12)


def test_short_signal_rejected():
    with pytest.raises(InvalidInputError):
        stft(Waveform(np.ones(100)))


def test_apply_mask_validates_shape_and_sign(rng):
    s = stft(Waveform(rng.standard_normal(1024)))
    with pytest.raises(InvalidInputError):
        apply_mask(s, np.ones((1, 257)))
    with pytest.raises(InvalidInputError):
        apply_mask(s, -np.ones(s.shape))
    half = apply_mask(s, np.full(s.shape, 0.5))
    np.testing.assert_allclose(magnitude(half).mag, 0.5 * magnitude(s).mag)


def test_htk_mel_scale_reference_points():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel([10.0, 440.0, 7999.0])), [10.0, 440.0, 7999.0])


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(512, 80, 16000)
    assert fb.shape == (80, 257)
    assert fb.min() >= 0.0 and fb.max() <= 1.0
    assert np.all(fb.sum(axis=1) > 0)  # no empty filter at 80 mels / 512 points
    peaks = fb.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_logmel_floor_and_shape():
    feats = logmel(MagnitudeSpectrogram(np.zeros((3, 257))), 80).feats
    assert feats.shape == (3, 80)
    np.testing.assert_allclose(feats, np.log(LOG_FLOOR))
    with pytest.raises(InvalidInputError):
        logmel(np.ones((3, 100)))


def test_logmel_tape_matches_numpy(rng):
    mag = rng.uniform(0, 2, size=(4, 257))
    ref = logmel(mag).feats
    out = logmel_tensor(Tensor(mag * mag)).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_mvn_normalizes_to_zero_mean_unit_variance(rng):
    feats = [rng.normal(3.0, 2.0, size=(n, 5)) for n in (10, 20, 7)]
    stats = compute_mvn(feats)
    out = np.concatenate([apply_mvn(f, stats).feats for f in feats])
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-12)


def test_mvn_constant_dimension_does_not_divide_by_zero():
    stats = compute_mvn([np.ones((4, 2))])
    assert np.all(np.isfinite(apply_mvn(np.ones((4, 2)), stats).feats))


@pytest.mark.parametrize("factor", [0.9, 1.0, 1.1])
def test_speed_perturb_length(factor, rng):
    w = Waveform(rng.standard_normal(16000))
    assert len(speed_perturb(w, factor)) == round(16000 / factor)


def test_speed_perturb_shifts_tone_frequency():
    t = np.arange(16000) / 16000
    w = Waveform(np.sin(2 * np.pi * 1000 * t))
    fast = speed_perturb(w, 1.1).samples
    peak = np.argmax(np.abs(np.fft.rfft(fast))) * 16000 / len(fast)
    assert peak == pytest.approx(1100, abs=5)
    with pytest.raises(InvalidInputError):
        speed_perturb(w, 2.0)


def test_wav_roundtrip_within_quantization(tmp_path, rng):
    x = np.clip(rng.normal(0, 0.2, 4000), -0.99, 0.99)
    write_wav(tmp_path / "a.wav", Waveform(x))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32768 + 1e-12


def test_waveform_validation():
    with pytest.raises(InvalidInputError):
        Waveform(np.array([]))
    with pytest.raises(InvalidInputError):
        Waveform(np.array([0.0, np.nan]))


def test_spectrogram_validation():
    with pytest.raises(InvalidInputError):
        ComplexSpectrogram(np.zeros((2, 10)), np.zeros((2, 10)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 20), st.integers(0, 127), st.integers(0, 2 ** 32 - 1))
def test_reconstruction_interior_property(extra_frames, tail, seed):
    x = np.random.default_rng(seed).standard_normal(512 + extra_frames * 128 + tail)
    y = istft(stft(Waveform(x))).samples
    n = len(y)
    np.testing.assert_allclose(y[1:n], x[1:n], atol=1e-10)
