import numpy as np
import pytest

from jointse.autodiff import Tensor, grad, ops
from jointse.errors import InvalidInputError
from jointse.se import (Mask, MaskEstimator, SeConfig, analyze, enhance, enhanced_features,
                        estimate_mask, se_loss, se_loss_tensor)
from jointse.signal import Waveform, istft, stft


def small_cfg(**kw):
    kw.setdefault("n_blstm_layers", 1)
    kw.setdefault("hidden_units", 8)
    return SeConfig(**kw)


def test_unit_mask_makes_phase_paths_agree(rng):
    x = rng.standard_normal(512 + 20 * 128)
    analysis = analyze([x], small_cfg().stft)
    ones = Tensor(np.ones_like(analysis.mag))
    keep, _ = enhanced_features(analysis, ones, small_cfg(phase_mode="preserve"))
    drop, _ = enhanced_features(analysis, ones, small_cfg(phase_mode="discard"))
    np.testing.assert_allclose(keep.data, drop.data, atol=1e-5)


def test_random_mask_separates_phase_paths(rng):
    x = rng.standard_normal(512 + 20 * 128)
    analysis = analyze([x], small_cfg().stft)
    m = Tensor(rng.uniform(0, 2, size=analysis.mag.shape))
    keep, _ = enhanced_features(analysis, m, small_cfg(phase_mode="preserve"))
    drop, _ = enhanced_features(analysis, m, small_cfg(phase_mode="discard"))
    assert np.sqrt(np.mean((keep.data - drop.data) ** 2)) > 1e-3


def test_estimator_mask_is_non_negative_for_every_activation(rng):
    mag = np.abs(rng.standard_normal((2, 7, 257))) * 3
    for act in ("relu", "mish", "swish", "metaacon"):
        net = MaskEstimator(small_cfg(mask_activation=act), rng)
        net.eval()
        assert net(mag, np.array([7, 4])).data.min() >= 0.0


def test_estimator_padding_invariance(rng):
    net = MaskEstimator(small_cfg(), rng)
    net.eval()
    mag = np.abs(rng.standard_normal((1, 5, 257)))
    padded = np.concatenate([mag, np.full((1, 3, 257), 7.0)], axis=1)
    a = net(mag).data
    b = net(padded, np.array([5])).data[:, :5]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_estimator_rejects_wrong_bin_count(rng):
    with pytest.raises(InvalidInputError):
        MaskEstimator(small_cfg(), rng)(np.ones((1, 3, 100)))


def test_se_loss_zero_when_mask_recovers_clean(rng):
    x = rng.standard_normal(512 + 8 * 128)
    analysis = analyze([x], small_cfg().stft)
    gain = rng.uniform(0.2, 1.0, size=analysis.mag.shape)
    clean = analysis.mag * gain
    assert se_loss_tensor(Tensor(gain), analysis, clean).item() == pytest.approx(0.0, abs=1e-24)
    assert se_loss(analysis.mag * gain, clean) == 0.0


def test_se_loss_ignores_padded_frames(rng):
    waves = [rng.standard_normal(512 + 8 * 128), rng.standard_normal(512 + 3 * 128)]
    analysis = analyze(waves, small_cfg().stft)
    clean = analysis.mag.copy()
    clean[1, 4:] = 123.0  # beyond utterance 1's frames
    m = Tensor(np.ones_like(analysis.mag))
    assert se_loss_tensor(m, analysis, clean).item() == 0.0
    with pytest.raises(InvalidInputError):
        se_loss_tensor(m, analysis, clean[:, :2])


def test_enhance_preserves_length_and_unit_mask_reconstructs(rng):
    x = rng.standard_normal(512 + 10 * 128 + 37)
    net = MaskEstimator(small_cfg(), rng)
    analysis = analyze([x], net.cfg.stft)
    out = enhance(Waveform(x), net, mask=np.ones(analysis.mag.shape[1:]))
    assert len(out.enhanced_wave) == len(x)
    covered = 512 + 10 * 128
    ref = istft(stft(Waveform(x))).samples
    np.testing.assert_allclose(out.enhanced_wave.samples[:covered], ref[:covered], atol=1e-12)
    assert np.all(out.enhanced_wave.samples[covered:] == 0.0)


def test_enhance_discard_has_no_waveform(rng):
    x = rng.standard_normal(2048)
    net = MaskEstimator(small_cfg(phase_mode="discard"), rng)
    out = enhance(x, net)
    assert out.enhanced_wave is None
    assert out.features.feats.shape[1] == 80


def test_estimate_mask_restores_training_flag(rng):
    net = MaskEstimator(small_cfg(dropout=0.5), rng)
    net.train()
    m = estimate_mask(np.ones((4, 257)), net)
    assert isinstance(m, Mask) and net.training
    with pytest.raises(InvalidInputError):
        Mask(-np.ones(3))


def test_asr_side_gradient_reaches_mask_network_in_both_paths(rng):
    x = rng.standard_normal(512 + 6 * 128)
    for phase in ("preserve", "discard"):
        cfg = small_cfg(phase_mode=phase, dropout=0.0)
        net = MaskEstimator(cfg, rng)
        analysis = analyze([x], cfg.stft)
        mask = net(analysis.mag, analysis.frame_lengths)
        feats, _ = enhanced_features(analysis, mask, cfg)
        gs = grad(ops.sum(feats), net.parameters())
        assert sum(np.abs(g).sum() for g in gs) > 0


def test_config_validation_and_roundtrip():
    cfg = small_cfg(mask_activation="Meta-ACON", phase_mode="discard")
    assert SeConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(InvalidInputError):
        SeConfig(hidden_units=4)
    with pytest.raises(ValueError):
        SeConfig(phase_mode="magnitude")
