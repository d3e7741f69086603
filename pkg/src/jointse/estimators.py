"""scikit-learn style estimators wrapping the joint trainer."""
from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator, TransformerMixin

from .asr import AsrConfig
from .autodiff.tensor import no_grad
from .errors import InvalidStateError
from .evaluation import corpus_cer
from .se import SeConfig, enhance
from .signal import SPEED_FACTORS, speed_perturb
from .training import LossWeights, TrainConfig, Trainer, TrainingMode, prepare_utterance
from .validation import check_pairs, check_transcripts, check_waveforms
from .vocab import Vocabulary


class _Base(BaseEstimator):
    def _se_config(self):
        return SeConfig(n_blstm_layers=self.se_layers, hidden_units=self.se_hidden,
                        mask_activation=self.mask_activation,
                        phase_mode=getattr(self, "phase", "preserve"),
                        dropout=self.dropout)

    def _check_fitted(self):
        if not hasattr(self, "system_"):
            raise InvalidStateError(f"{type(self).__name__} is not fitted yet")

    def _utterances(self, noisy, clean, transcripts, vocab, cfg):
        utts = []
        factors = SPEED_FACTORS if getattr(self, "speed_perturb", False) else (1.0,)
        for i, x in enumerate(noisy):
            c = None if clean is None else clean[i]
            for f in factors:
                xs = x if f == 1.0 else speed_perturb(x, f)
                cs = c if (c is None or f == 1.0) else speed_perturb(c, f)
                uid = f"fit-{i}" if f == 1.0 else f"fit-{i}-sp{f:g}"
                utts.append(prepare_utterance(uid, cs, xs, transcripts[i], vocab, cfg.se.stft,
                                              cfg.asr.n_mels))
        return utts


class JointSpeechRecognizer(_Base):
    """Mask-based enhancement front-end trained jointly with a Conformer recognizer.

    ``fit(X, y, clean=None)`` takes noisy waveforms, their transcripts and,
    for every mode except ``baseline`` and ``joint``, the aligned clean
    waveforms. ``predict`` returns transcripts; ``transform`` returns
    enhanced waveforms; ``score`` is ``1 - CER``.
    """

    def __init__(self, mode="mtjl", beta=0.3, gamma=0.7, lam=0.3, phase="preserve",
                 mask_activation="relu", se_layers=2, se_hidden=128, dropout=0.1,
                 d_model=64, encoder_layers=2, decoder_layers=2, heads=4, ff_hidden=256,
                 steps=2000, se_steps=None, batch_size=32, lr=0.002, grad_clip=5.0,
                 speed_perturb=False, decode_mode="attention", alphabet=None, seed=0):
        self.mode = mode
        self.beta = beta
        self.gamma = gamma
        self.lam = lam
        self.phase = phase
        self.mask_activation = mask_activation
        self.se_layers = se_layers
        self.se_hidden = se_hidden
        self.dropout = dropout
        self.d_model = d_model
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.heads = heads
        self.ff_hidden = ff_hidden
        self.steps = steps
        self.se_steps = se_steps
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.speed_perturb = speed_perturb
        self.decode_mode = decode_mode
        self.alphabet = alphabet
        self.seed = seed

    def _config(self, vocab):
        asr = AsrConfig(n_encoder_layers=self.encoder_layers, n_decoder_layers=self.decoder_layers,
                        d_model=self.d_model, n_heads=self.heads, ff_hidden=self.ff_hidden,
                        ctc_weight=self.lam, vocab=vocab)
        return TrainConfig(mode=self.mode, weights=LossWeights(self.lam, self.beta, self.gamma),
                           se=self._se_config(), asr=asr, lr=self.lr, batch_size=self.batch_size,
                           steps=self.steps, se_steps=self.se_steps, seed=self.seed,
                           speed_perturb=self.speed_perturb, grad_clip=self.grad_clip, valid_every=0)

    def fit(self, X, y, clean=None):
        noisy = check_waveforms(X)
        clean = check_pairs(noisy, clean)
        vocab = Vocabulary(list(self.alphabet)) if self.alphabet else Vocabulary()
        y = check_transcripts(y, vocab, len(noisy))
        cfg = self._config(vocab)
        mode = TrainingMode.parse(self.mode)
        if clean is None and mode in (TrainingMode.MTJL, TrainingMode.DC_MTJL, TrainingMode.DISJOINT):
            raise InvalidStateError(f"mode {mode.value} needs aligned clean waveforms")
        trainer = Trainer(cfg, self._utterances(noisy, clean, y, vocab, cfg))
        result = trainer.run()
        self.system_ = result.system
        self.reports_ = result.reports
        self.n_steps_ = result.steps_run
        return self

    def predict(self, X):
        self._check_fitted()
        return self.system_.transcribe(check_waveforms(X), self.decode_mode)

    def transform(self, X):
        """Enhanced waveforms (noisy phase, masked magnitude)."""
        self._check_fitted()
        if self.system_.se is None:
            raise InvalidStateError("baseline mode has no enhancement front-end")
        cfg = dataclasses.replace(self.system_.se_cfg, phase_mode="preserve")
        with no_grad():
            return [enhance(x, self.system_.se, cfg).enhanced_wave for x in check_waveforms(X)]

    def score(self, X, y):
        hyps = self.predict(X)
        return 1.0 - corpus_cer([str(t) for t in y], hyps)


class MaskEnhancer(_Base, TransformerMixin):
    """Stand-alone mask estimator trained on the spectral-magnitude loss alone."""

    def __init__(self, se_layers=2, se_hidden=128, mask_activation="relu", dropout=0.1,
                 steps=500, batch_size=32, lr=0.002, grad_clip=5.0, seed=0):
        self.se_layers = se_layers
        self.se_hidden = se_hidden
        self.mask_activation = mask_activation
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.seed = seed

    def fit(self, X, y=None, clean=None):
        """``clean`` (or ``y``) holds the aligned clean waveforms."""
        noisy = check_waveforms(X)
        clean = check_pairs(noisy, clean if clean is not None else y)
        if clean is None:
            raise InvalidStateError("MaskEnhancer.fit needs aligned clean waveforms")
        vocab = Vocabulary()
        cfg = TrainConfig(mode="disjoint", se=self._se_config(), steps=0, se_steps=self.steps,
                          batch_size=self.batch_size, lr=self.lr, grad_clip=self.grad_clip,
                          seed=self.seed, valid_every=0)
        placeholder = [vocab.symbols[0]] * len(noisy)
        trainer = Trainer(cfg, self._utterances(noisy, clean, placeholder, vocab, cfg))
        result = trainer.run()
        self.system_ = result.system
        self.reports_ = result.reports
        return self

    def transform(self, X):
        self._check_fitted()
        with no_grad():
            return [enhance(x, self.system_.se).enhanced_wave for x in check_waveforms(X)]

    def masks(self, X):
        from .se import analyze, estimate_mask

        self._check_fitted()
        out = []
        for x in check_waveforms(X):
            a = analyze([x], self.system_.se_cfg.stft)
            out.append(estimate_mask(a.mag[0], self.system_.se).values)
        return out
