"""Waveform loading, resampling, and repetitive batch padding.

Supported on-disk format: RIFF/WAVE PCM, 16-bit integer or 32-bit float.
Stereo files are down-mixed by channel average. All in-memory audio is mono
float64 in [-1, 1].

Resampling uses a polyphase windowed-sinc filter (``scipy.signal.resample_poly``
with its default Kaiser window, beta=5.0). The kernel is fixed so that the
same file always resamples to the same bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioFormatError, AudioReadError

_SUPPORTED_DTYPES = {np.dtype(np.int16), np.dtype(np.float32)}


@dataclass
class Waveform:
    """Mono audio signal. ``samples`` is a 1-D float64 array in [-1, 1]."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class WaveBatch:
    """Rectangular batch of waveforms padded by cyclic repetition.

    Row i beyond ``true_lengths[i]`` holds ``samples[j % true_lengths[i]]``,
    never zeros, so padded regions keep the statistics of the source signal.
    """

    padded_samples: np.ndarray  # (B, L) float64
    true_lengths: np.ndarray  # (B,) int64
    rate: int

    def __post_init__(self):
        if self.padded_samples.ndim != 2:
            raise ValueError("padded_samples must be 2-D (batch, time)")
        if len(self.true_lengths) != self.padded_samples.shape[0]:
            raise ValueError("true_lengths length must match batch size")
        if int(self.true_lengths.max(initial=0)) != self.padded_samples.shape[1]:
            raise ValueError("max(true_lengths) must equal the padded length")

    def __len__(self) -> int:
        return self.padded_samples.shape[0]


def load_wav(path: str | Path) -> Waveform:
    """Read a PCM WAV file without resampling."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise AudioReadError(f"audio file not found: {path}") from exc
    except ValueError as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV ({exc})") from exc
    except OSError as exc:
        raise AudioReadError(f"{path}: {exc}") from exc
    if data.dtype not in _SUPPORTED_DTYPES:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype}; expected int16 or float32"
        )
    if data.ndim == 2:
        samples = data.astype(np.float64).mean(axis=1)
    else:
        samples = data.astype(np.float64)
    if data.dtype == np.int16:
        samples /= 32768.0
    samples = np.clip(samples, -1.0, 1.0)
    if samples.size == 0:
        raise AudioFormatError(f"{path}: file contains no samples")
    return Waveform(samples=samples, rate=int(rate))


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Polyphase resample; identity (same object) when rates already match."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if wave.rate == target_rate:
        return wave
    g = gcd(wave.rate, target_rate)
    up, down = target_rate // g, wave.rate // g
    out = resample_poly(wave.samples, up, down)
    out = np.clip(out, -1.0, 1.0)
    return Waveform(samples=out, rate=target_rate)


def load_and_resample(path: str | Path, target_rate: int) -> Waveform:
    """Read a PCM WAV file and bring it to ``target_rate``."""
    return resample(load_wav(path), target_rate)


def write_wav(path: str | Path, wave: Waveform) -> None:
    """Write 16-bit PCM. Quantization is round-half-away-from-even via np.round."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scaled = np.round(np.clip(wave.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(path, wave.rate, scaled)


def crop_head(wave: Waveform, max_seconds: float) -> Waveform:
    """Keep at most the first ``max_seconds`` of audio (training memory control)."""
    if max_seconds <= 0:
        raise ValueError("max_seconds must be positive")
    max_samples = int(round(max_seconds * wave.rate))
    if len(wave.samples) <= max_samples:
        return wave
    return Waveform(samples=wave.samples[:max_samples].copy(), rate=wave.rate)


def repetitive_pad(waves: Sequence[Waveform]) -> WaveBatch:
    """Batch waveforms to the max length by tiling each signal cyclically."""
    if len(waves) == 0:
        raise ValueError("cannot pad an empty batch")
    rates = {w.rate for w in waves}
    if len(rates) != 1:
        raise ValueError(f"all waveforms must share one rate, got {sorted(rates)}")
    lengths = np.array([len(w.samples) for w in waves], dtype=np.int64)
    if int(lengths.min()) == 0:
        raise ValueError("cannot pad empty waveforms")
    target = int(lengths.max())
    padded = np.empty((len(waves), target), dtype=np.float64)
    for i, w in enumerate(waves):
        padded[i] = np.resize(w.samples, target)  # np.resize tiles cyclically
    return WaveBatch(padded_samples=padded, true_lengths=lengths, rate=waves[0].rate)


def strip_padding(batch: WaveBatch) -> list[Waveform]:
    """Inverse of :func:`repetitive_pad`: recover the original waveforms."""
    return [
        Waveform(samples=batch.padded_samples[i, : int(n)].copy(), rate=batch.rate)
        for i, n in enumerate(batch.true_lengths)
    ]
