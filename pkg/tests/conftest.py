from __future__ import annotations

import numpy as np
import pytest

from mospred.audio import Waveform, write_wav
from mospred.encoder import EncoderConfig, ToySpectralEncoder
from mospred.model import HeadConfig, PredictorHead


def make_tone(freq: float, duration: float, rate: int, amplitude: float = 0.5, phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(duration * rate))) / rate
    return Waveform(samples=amplitude * np.sin(2 * np.pi * freq * t + phase), rate=rate)


def make_noise(rng: np.random.Generator, n: int, rate: int, amplitude: float = 0.4) -> Waveform:
    return Waveform(samples=amplitude * rng.uniform(-1.0, 1.0, n), rate=rate)


# small encoder settings: fast tests, same code paths as the defaults
TINY_ENC = dict(n_fft=256, hop=128, n_mels=16, channels=8, dim=8, sample_rate=16000)


@pytest.fixture
def tiny_encoder() -> ToySpectralEncoder:
    return ToySpectralEncoder(EncoderConfig(**TINY_ENC, seed=3))


@pytest.fixture
def tiny_encoder_f64() -> ToySpectralEncoder:
    return ToySpectralEncoder(EncoderConfig(**TINY_ENC, seed=3), dtype=np.float64)


def tiny_head(input_dim: int = 8, dtype=np.float32, **overrides) -> PredictorHead:
    defaults = dict(hidden=16, clip_min=1.0, clip_max=5.0, seed=5)
    defaults.update(overrides)
    listener_ids = defaults.pop("listener_ids", None)
    dataset_ids = defaults.pop("dataset_ids", None)
    cfg = HeadConfig(**defaults)
    return PredictorHead(
        input_dim=input_dim, cfg=cfg, listener_ids=listener_ids, dataset_ids=dataset_ids, dtype=dtype
    )


@pytest.fixture
def wav_file(tmp_path):
    """A 1-second 440 Hz tone on disk at 16 kHz."""
    path = tmp_path / "tone.wav"
    write_wav(path, make_tone(440.0, 1.0, 16000))
    return path
