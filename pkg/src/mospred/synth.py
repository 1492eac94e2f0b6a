"""Synthetic rated corpus: tone-plus-noise utterances with known quality order.

Each "system" renders sine tones at a fixed signal-to-noise ratio, monotone in
the system index. Ratings follow a linear map from SNR into [1.3, 4.7] plus a
bounded per-listener bias (|bias| <= 0.3, so the clamp to [1, 5] never bites)
and optional per-rating noise. With zero rating noise the mean score is
therefore strictly increasing in the system index, which makes the corpus a
self-checking fixture for the whole pipeline.

Everything is drawn from one seeded generator in a fixed order, so a given
spec reproduces bit-identical WAV files and rating tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .errors import ConfigError
from .manifest import RatedUtterance, write_manifest

RATINGS_FILENAME = "ratings.csv"
SCORE_LO, SCORE_HI = 1.0, 5.0
TARGET_LO, TARGET_HI = 1.3, 4.7
MAX_LISTENER_BIAS = 0.3


@dataclass
class SynthSpec:
    n_systems: int = 8
    utts_per_system: int = 10
    n_listeners: int = 3
    seed: int = 1234
    sample_rate: int = 16000
    duration_range: tuple[float, float] = (1.0, 2.0)
    freq_range: tuple[float, float] = (200.0, 2000.0)
    snr_db_range: tuple[float, float] = (-5.0, 25.0)
    listener_bias: float = 0.2
    rating_noise: float = 0.1
    dataset_name: str = "synth"

    def validate(self) -> None:
        if min(self.n_systems, self.utts_per_system, self.n_listeners) < 1:
            raise ConfigError("system/utterance/listener counts must be positive")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not 0 < self.duration_range[0] <= self.duration_range[1]:
            raise ConfigError("bad duration_range")
        if not 0 < self.freq_range[0] <= self.freq_range[1] < self.sample_rate / 2:
            raise ConfigError("freq_range must sit below Nyquist")
        if not 0 <= self.listener_bias <= MAX_LISTENER_BIAS:
            raise ConfigError(f"listener_bias must lie in [0, {MAX_LISTENER_BIAS}]")
        if self.rating_noise < 0:
            raise ConfigError("rating_noise must be >= 0")


def system_quality_targets(spec: SynthSpec) -> np.ndarray:
    """Per-system true quality: linear in SNR, spanning [1.3, 4.7]."""
    if spec.n_systems == 1:
        return np.array([(TARGET_LO + TARGET_HI) / 2.0])
    snr = np.linspace(*spec.snr_db_range, spec.n_systems)
    span = spec.snr_db_range[1] - spec.snr_db_range[0]
    if span <= 0:
        raise ConfigError("snr_db_range must be increasing")
    return TARGET_LO + (TARGET_HI - TARGET_LO) * (snr - snr[0]) / span


def _render_utterance(rng: np.random.Generator, spec: SynthSpec, snr_db: float) -> Waveform:
    freq = rng.uniform(*spec.freq_range)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    duration = rng.uniform(*spec.duration_range)
    n = int(round(duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    clean = 0.5 * np.sin(2.0 * np.pi * freq * t + phase)
    noise = rng.standard_normal(n)
    clean_power = float((clean**2).mean())
    target_noise_power = clean_power / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(target_noise_power / float((noise**2).mean()))
    samples = clean + noise
    peak = float(np.abs(samples).max())
    if peak > 0.95:
        samples *= 0.95 / peak
    return Waveform(samples=samples, rate=spec.sample_rate)


def make_synth(spec: SynthSpec, out_dir: str | Path) -> list[RatedUtterance]:
    """Generate WAVs under ``out_dir/wav`` and the rating table; return its rows."""
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    biases = rng.uniform(-spec.listener_bias, spec.listener_bias, size=spec.n_listeners)
    snrs = np.linspace(*spec.snr_db_range, spec.n_systems)
    quality = system_quality_targets(spec)
    rows: list[RatedUtterance] = []
    for s in range(spec.n_systems):
        system_id = f"sys{s:02d}"
        for u in range(spec.utts_per_system):
            sample_id = f"{system_id}_utt{u:03d}"
            rel_path = f"wav/{sample_id}.wav"
            wave = _render_utterance(rng, spec, float(snrs[s]))
            write_wav(out_dir / rel_path, wave)
            for li in range(spec.n_listeners):
                noise = rng.normal(0.0, spec.rating_noise) if spec.rating_noise > 0 else 0.0
                score = float(np.clip(quality[s] + biases[li] + noise, SCORE_LO, SCORE_HI))
                rows.append(
                    RatedUtterance(
                        wav_path=rel_path,
                        sample_id=sample_id,
                        score=score,
                        system_id=system_id,
                        listener_id=f"L{li:02d}",
                        dataset_id=spec.dataset_name,
                    )
                )
    write_manifest(rows, out_dir / RATINGS_FILENAME)
    return rows
