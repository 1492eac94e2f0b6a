"""mospred: train and evaluate predictors of human speech-quality ratings.

The package is a plain numpy/scipy library. Main entry points:

- :mod:`mospred.manifest` — the CSV rating-manifest format
- :mod:`mospred.audio` — WAV loading, resampling, repetitive padding
- :mod:`mospred.encoder` — frame-feature backends (trainable toy-spectral,
  precomputed adapters)
- :mod:`mospred.model` / :mod:`mospred.predictor` — scoring head, checkpoints
- :mod:`mospred.losses`, :mod:`mospred.optim`, :mod:`mospred.trainer` — training
- :mod:`mospred.metrics` — utterance/system-level evaluation
- :mod:`mospred.knn` — retrieval-augmented scoring
- :mod:`mospred.registry` — digest-verified pretrained-model registry
- :mod:`mospred.cli` — the ``mospred`` command
"""

__version__ = "0.1.0"

from .audio import Waveform, WaveBatch, load_and_resample, repetitive_pad
from .encoder import EncoderConfig, FrameFeatures
from .knn import Datastore, FusionConfig
from .losses import LossConfig
from .manifest import DatasetSpec, RatedUtterance, read_manifest, write_manifest
from .metrics import EvaluationReport, evaluate, lcc, mse, srcc
from .model import HeadConfig, PredictorHead, predict_utterance, range_clip, time_pool
from .predictor import Predictor, build_predictor
from .trainer import TrainConfig, TrainState, train, update_early_stop

__all__ = [
    "__version__",
    "Waveform",
    "WaveBatch",
    "load_and_resample",
    "repetitive_pad",
    "EncoderConfig",
    "FrameFeatures",
    "Datastore",
    "FusionConfig",
    "LossConfig",
    "DatasetSpec",
    "RatedUtterance",
    "read_manifest",
    "write_manifest",
    "EvaluationReport",
    "evaluate",
    "lcc",
    "mse",
    "srcc",
    "HeadConfig",
    "PredictorHead",
    "predict_utterance",
    "range_clip",
    "time_pool",
    "Predictor",
    "build_predictor",
    "TrainConfig",
    "TrainState",
    "train",
    "update_early_stop",
]
