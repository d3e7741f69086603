"""Small in-memory systems and utterances shared by the training tests."""
import numpy as np

from jointse.asr import AsrConfig
from jointse.corpus import DegradeConfig, make_pair, sample_transcripts
from jointse.se import SeConfig
from jointse.signal import compute_mvn
from jointse.training import JointSystem, TrainConfig, make_batch, prepare_pairs
from jointse.vocab import Vocabulary


def tiny_asr_cfg(**kw):
    base = dict(n_encoder_layers=1, n_decoder_layers=1, d_model=16, n_heads=2, ff_hidden=32,
                kernel_size=3, vocab=Vocabulary())
    base.update(kw)
    return AsrConfig(**base)


def tiny_se_cfg(**kw):
    base = dict(n_blstm_layers=1, hidden_units=8, dropout=0.0)
    base.update(kw)
    return SeConfig(**base)


def tiny_pairs(n, seed=0, max_len=4):
    (texts,) = sample_transcripts([n], seed, max_len=max_len)
    cfg = DegradeConfig()
    return [make_pair(f"u{i}", t, cfg, np.random.default_rng([seed, i])) for i, t in enumerate(texts)]


def tiny_utts(n, seed=0, max_len=4):
    return prepare_pairs(tiny_pairs(n, seed, max_len), Vocabulary())


def tiny_system(utts, seed=0, se=True, **se_kw):
    mvn = compute_mvn([u.noisy_logmel for u in utts])
    system = JointSystem(tiny_asr_cfg(), tiny_se_cfg(**se_kw) if se else None, mvn, seed=seed)
    return system.train(False)


def tiny_batch(utts):
    return make_batch(utts)


def tiny_train_config(mode="mtjl", **kw):
    base = dict(mode=mode, se=tiny_se_cfg(), asr=tiny_asr_cfg(), batch_size=4, steps=4,
                valid_every=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)
