import math

import numpy as np
import pytest

from jointse.asr import (AsrConfig, AsrModel, EncoderOutput, asr_loss, att_loss,
                         combine_asr_losses, ctc_collapse, ctc_loss, ctc_nll, decoder_io, encode,
                         greedy_decode, min_ctc_frames, subsampled_length)
from jointse.autodiff import Tensor, grad, ops
from jointse.errors import AlignmentError, InvalidInputError
from jointse.vocab import BLANK, PAD, SOS_EOS, Vocabulary

from oracles import brute_force_ctc_nll


def tiny_model(rng, **kw):
    cfg = AsrConfig(n_encoder_layers=1, n_decoder_layers=1, d_model=8, n_heads=2, ff_hidden=16,
                    kernel_size=3, n_mels=6, vocab=Vocabulary(list("abc")), **kw)
    return AsrModel(cfg, rng)


def test_ctc_matches_brute_force_on_samples(rng):
    for target in [(), (1,), (1, 1), (2, 1, 2)]:
        logits = rng.standard_normal((1, 5, 3))
        lp = ops.log_softmax(Tensor(logits), axis=-1)
        got = ctc_nll(lp, [list(target)], [5]).data[0]
        assert got == pytest.approx(brute_force_ctc_nll(lp.data[0], target), abs=1e-10)


def test_ctc_batched_with_unequal_lengths(rng):
    lp = ops.log_softmax(Tensor(rng.standard_normal((2, 5, 3))), axis=-1)
    got = ctc_nll(lp, [[1, 2], [2]], [5, 3]).data
    assert got[0] == pytest.approx(brute_force_ctc_nll(lp.data[0], (1, 2)), abs=1e-10)
    assert got[1] == pytest.approx(brute_force_ctc_nll(lp.data[1, :3], (2,)), abs=1e-10)


def test_ctc_infeasible_target_raises(rng):
    lp = ops.log_softmax(Tensor(rng.standard_normal((1, 2, 3))), axis=-1)
    with pytest.raises(AlignmentError):
        ctc_nll(lp, [[1, 1]], [2])
    assert min_ctc_frames([1, 1, 2, 2]) == 6


def test_ctc_non_increasing_in_target_emission_score(rng):
    # raising one target symbol's frame score can only add path mass
    lp = np.log(rng.dirichlet(np.ones(4), size=(1, 6)))
    target = [1, 3]

    def loss(scores):
        return ctc_nll(Tensor(scores), [target], [6]).data[0]

    base = loss(lp)
    for t, s in [(0, 1), (2, 3), (5, 3), (3, 1)]:
        bumped = lp.copy()
        bumped[0, t, s] += 0.5
        assert loss(bumped) <= base


def test_ctc_collapse_examples():
    a, b = 3, 4
    assert ctc_collapse([a, a, BLANK, b]) == [a, b]
    assert ctc_collapse([BLANK, BLANK]) == []
    assert ctc_collapse([a, BLANK, a]) == [a, a]


def test_subsampled_length():
    np.testing.assert_array_equal(subsampled_length(np.array([1, 4, 5, 8, 9])), [1, 1, 2, 2, 3])


def test_encoder_output_length_and_shape(rng):
    model = tiny_model(rng)
    enc = model.encode(Tensor(rng.standard_normal((2, 13, 6))), np.array([13, 9]))
    assert enc.frames.shape == (2, 4, 8)
    np.testing.assert_array_equal(enc.lengths, [4, 3])
    with pytest.raises(InvalidInputError):
        model.encode(Tensor(np.zeros((1, 8, 5))), np.array([8]))


def test_uniform_decoder_gives_log_vocab_cross_entropy(rng):
    model = tiny_model(rng)
    model.decoder.out.weight.data[:] = 0.0
    model.decoder.out.bias.data[:] = 0.0
    enc = EncoderOutput(Tensor(rng.standard_normal((1, 3, 8))), np.array([3]))
    assert model.att_loss(enc, [[3, 4, 5]]).item() == pytest.approx(math.log(len(model.cfg.vocab)))


def test_decoder_is_causal(rng):
    model = tiny_model(rng)
    enc = EncoderOutput(Tensor(rng.standard_normal((1, 3, 8))), np.array([3]))
    a = model.decoder(np.array([[SOS_EOS, 3, 4, 5]]), enc).data
    b = model.decoder(np.array([[SOS_EOS, 3, 5, 3]]), enc).data
    np.testing.assert_array_equal(a[:, :2], b[:, :2])
    assert not np.allclose(a[:, 2:], b[:, 2:])


def test_decoder_io_shifts_with_sos_eos():
    ins, outs, lengths = decoder_io([[3, 4], [5]])
    np.testing.assert_array_equal(ins, [[SOS_EOS, 3, 4], [SOS_EOS, 5, PAD]])
    np.testing.assert_array_equal(outs, [[3, 4, SOS_EOS], [5, SOS_EOS, PAD]])


def test_att_loss_empty_target_raises(rng):
    model = tiny_model(rng)
    enc = EncoderOutput(Tensor(rng.standard_normal((1, 3, 8))), np.array([3]))
    with pytest.raises(InvalidInputError):
        model.att_loss(enc, [[]])


def test_asr_loss_arithmetic_and_endpoints(rng):
    assert combine_asr_losses(Tensor(np.array(2.0)), Tensor(np.array(1.0)), 0.3).item() == pytest.approx(1.7)
    model = tiny_model(rng)
    enc = model.encode(Tensor(rng.standard_normal((1, 12, 6))), np.array([12]))
    targets = [[3, 4]]
    att = model.att_loss(enc, targets).item()
    ctc = model.ctc_loss(enc, targets).item()
    assert model.loss(enc, targets, 0.0)[0].item() == att
    assert model.loss(enc, targets, 1.0)[0].item() == ctc
    mid = model.loss(enc, targets, 0.5)[0].item()
    assert abs(mid - 0.5 * (att + ctc)) < 1e-10
    with pytest.raises(InvalidInputError):
        model.loss(enc, targets, 1.5)


def test_ctc_loss_gradient_flows_to_encoder(rng):
    model = tiny_model(rng)
    feats = Tensor(rng.standard_normal((1, 12, 6)), requires_grad=True)
    loss = model.ctc_loss(model.encode(feats, np.array([12])), [[3]])
    (g,) = grad(loss, [feats])
    assert np.abs(g).sum() > 0


def test_greedy_ctc_all_blank_is_empty(rng):
    model = tiny_model(rng)
    model.ctc_head.weight.data[:] = 0.0
    model.ctc_head.bias.data[:] = 0.0
    model.ctc_head.bias.data[BLANK] = 5.0
    enc = EncoderOutput(Tensor(rng.standard_normal((2, 3, 8))), np.array([3, 2]))
    assert model.greedy_decode(enc, "ctc") == [[], []]


def test_greedy_attention_terminates_within_twice_frames(rng):
    model = tiny_model(rng)
    model.decoder.out.weight.data[:] = 0.0
    model.decoder.out.bias.data[:] = 0.0
    model.decoder.out.bias.data[3] = 5.0  # always emits the first symbol, never eos
    enc = EncoderOutput(Tensor(rng.standard_normal((1, 3, 8))), np.array([3]))
    (ids,) = model.greedy_decode(enc, "attention")
    assert len(ids) <= 2 * 3
    with pytest.raises(InvalidInputError):
        model.greedy_decode(enc, "beam")


def test_single_utterance_wrappers(rng):
    model = tiny_model(rng)
    enc = encode(rng.standard_normal((12, 6)), model)
    total = asr_loss(enc, [3, 4], model, 0.3).item()
    parts = 0.7 * att_loss(enc, [3, 4], model).item() + 0.3 * ctc_loss(enc, [3, 4], model).item()
    assert total == pytest.approx(parts, abs=1e-12)
    assert isinstance(greedy_decode(enc, model, "ctc").tokens, list)


def test_config_roundtrip():
    cfg = AsrConfig(d_model=16, n_heads=2, vocab=Vocabulary(list("xyz")))
    back = AsrConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(InvalidInputError):
        AsrConfig(d_model=10, n_heads=4)
