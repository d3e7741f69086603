"""Joint speech enhancement and speech recognition at toy scale.

A BLSTM mask estimator and a Conformer CTC/attention recognizer trained
together on a synthetic radio-channel corpus, on a small numpy autodiff
engine.
"""
from .asr import AsrConfig, AsrModel
from .corpus import DegradeConfig, UtterancePair, degrade, generate_corpus, synth_clean
from .errors import (AlignmentError, InvalidInputError, InvalidStateError, NumericDivergence,
                     NumericError)
from .estimators import JointSpeechRecognizer, MaskEnhancer
from .evaluation import SeMetrics, WerResult, corpus_cer, si_snr, wer
from .se import MaskEstimator, PhaseMode, SeConfig, enhance
from .signal import StftParams, Waveform, istft, logmel, stft
from .training import JointSystem, LossWeights, TrainConfig, Trainer, TrainingMode, train
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "AsrConfig", "AsrModel", "DegradeConfig", "InvalidInputError",
    "InvalidStateError", "JointSpeechRecognizer", "JointSystem", "LossWeights", "MaskEnhancer",
    "MaskEstimator", "NumericDivergence", "NumericError", "PhaseMode", "SeConfig", "SeMetrics",
    "StftParams", "TrainConfig", "Trainer", "TrainingMode", "UtterancePair", "Vocabulary",
    "Waveform", "WerResult", "corpus_cer", "degrade", "enhance", "generate_corpus", "istft",
    "logmel", "si_snr", "stft", "synth_clean", "train", "wer",
]
