"""Frame-level feature encoders.

Two backends share one interface:

``toy-spectral``
    A log-mel filterbank frontend followed by a small trainable 2-layer time
    convolution. The frontend is fixed; the conv stack trains jointly with the
    scoring head. Desk-scale stand-in for a large pretrained speech encoder.

``precomputed``
    Reads one feature matrix per utterance from disk, keyed by sample_id, so
    features exported from any external model can drive training/inference
    without adding dependencies here.

Feature matrix file format (``.fmat``), little-endian:
    bytes 0..7   magic ``b"MOSFEAT1"``
    bytes 8..11  uint32 T (frames)
    bytes 12..15 uint32 D (feature dim)
    bytes 16..   T*D float32 values, row-major
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import WaveBatch, Waveform
from .errors import ConfigError, EncoderInputError, FeatureFileError
from .nnops import conv1d_same_backward, conv1d_same_forward, glorot_uniform, relu_backward, relu_forward

FEATURE_MAGIC = b"MOSFEAT1"


@dataclass
class FrameFeatures:
    """Frame-wise representation of one utterance: (T, D) real matrix."""

    matrix: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise ValueError(f"feature matrix must be (T>=1, D), got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def write_feature_matrix(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    t, d = matrix.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(np.uint32(t).tobytes())
        f.write(np.uint32(d).tobytes())
        f.write(matrix.tobytes())


def read_feature_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FeatureFileError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic, not a feature matrix file")
    t = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
    d = int(np.frombuffer(raw, dtype="<u4", count=1, offset=12)[0])
    expected = 16 + 4 * t * d
    if len(raw) != expected:
        raise FeatureFileError(f"{path}: expected {expected} bytes for {t}x{d}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(t, d).copy()


def mel_filterbank(rate: float, n_fft: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters (peak 1) spaced on the mel scale; (n_mels, n_fft//2+1)."""
    if fmax is None:
        fmax = rate / 2.0

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    mel_pts = np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2)
    hz_pts = to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class EncoderConfig:
    """Configuration shared by both backends; unused fields may stay default."""

    kind: str = "toy-spectral"
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 320
    n_mels: int = 80
    channels: int = 64
    dim: int = 64
    mel_floor: float = 1e-10
    feat_offset: float = 10.0
    feat_scale: float = 10.0
    layer_select: str = "last"
    seed: int = 0
    feature_dir: str | None = None  # precomputed backend only
    frame_rate: float | None = None  # precomputed backend only

    def validate(self) -> None:
        if self.kind not in ("toy-spectral", "precomputed"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.layer_select != "last":
            raise ConfigError(
                f"layer_select={self.layer_select!r}: both backends expose only their last layer"
            )
        if self.kind == "toy-spectral":
            if self.n_fft <= 0 or self.hop <= 0 or self.n_mels <= 0:
                raise ConfigError("n_fft, hop, n_mels must be positive")
            if self.hop > self.n_fft:
                raise ConfigError("hop must not exceed n_fft")
            if self.dim <= 0 or self.channels <= 0:
                raise ConfigError("channels and dim must be positive")
            if self.feat_scale <= 0:
                raise ConfigError("feat_scale must be positive")
        else:
            if not self.feature_dir:
                raise ConfigError("precomputed encoder requires feature_dir")
            if not self.frame_rate or self.frame_rate <= 0:
                raise ConfigError("precomputed encoder requires a positive frame_rate")
            if self.dim <= 0:
                raise ConfigError("dim must be positive")


class ToySpectralEncoder:
    """Log-mel frontend + trainable 2-layer conv stack over time."""

    name = "toy-spectral"
    trainable = True
    requires_waveform = True

    def __init__(self, cfg: EncoderConfig, dtype=np.float32, params: dict[str, np.ndarray] | None = None):
        cfg.validate()
        if cfg.kind != "toy-spectral":
            raise ConfigError(f"ToySpectralEncoder got kind {cfg.kind!r}")
        self.cfg = cfg
        self.frame_rate = cfg.sample_rate / cfg.hop
        self.dim = cfg.dim
        self.expected_rate = cfg.sample_rate
        self._window = hann_periodic(cfg.n_fft)
        self._filterbank = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels)
        if params is not None:
            self.params = {k: np.asarray(v) for k, v in params.items()}
        else:
            rng = np.random.default_rng(cfg.seed)
            k = 3
            self.params = {
                "conv1.weight": glorot_uniform(
                    rng, (k, cfg.n_mels, cfg.channels), k * cfg.n_mels, cfg.channels, dtype
                ),
                "conv1.bias": np.zeros(cfg.channels, dtype=dtype),
                "conv2.weight": glorot_uniform(
                    rng, (k, cfg.channels, cfg.dim), k * cfg.channels, cfg.dim, dtype
                ),
                "conv2.bias": np.zeros(cfg.dim, dtype=dtype),
            }

    # frontend ---------------------------------------------------------

    def _check_wave(self, wave: Waveform) -> None:
        if wave.rate != self.expected_rate:
            raise EncoderInputError(
                f"waveform rate {wave.rate} != encoder rate {self.expected_rate}; resample first"
            )
        if len(wave.samples) < self.cfg.n_fft:
            raise EncoderInputError(
                f"waveform of {len(wave.samples)} samples is shorter than one "
                f"analysis frame ({self.cfg.n_fft} samples)"
            )

    def log_mel(self, signals: np.ndarray) -> np.ndarray:
        """(B, L) float64 -> (B, T, n_mels) normalized log-mel, T = 1 + L//hop."""
        cfg = self.cfg
        pad = cfg.n_fft // 2
        xp = np.pad(signals, ((0, 0), (pad, pad)), mode="reflect")
        frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.n_fft, axis=1)[:, :: cfg.hop, :]
        spectrum = np.abs(np.fft.rfft(frames * self._window, axis=-1)) ** 2
        mel = spectrum @ self._filterbank.T
        return (np.log(mel + cfg.mel_floor) + cfg.feat_offset) / cfg.feat_scale

    # trainable stack ----------------------------------------------------

    def _conv_forward(self, feats: np.ndarray):
        h1, c1 = conv1d_same_forward(feats, self.params["conv1.weight"], self.params["conv1.bias"])
        a1, ca = relu_forward(h1)
        out, c2 = conv1d_same_forward(a1, self.params["conv2.weight"], self.params["conv2.bias"])
        return out, (c1, ca, c2)

    def forward_batch(self, batch: WaveBatch):
        """Training-path forward: (trimmed per-item features, cache)."""
        if batch.rate != self.expected_rate:
            raise EncoderInputError(
                f"batch rate {batch.rate} != encoder rate {self.expected_rate}"
            )
        if int(batch.true_lengths.min()) < self.cfg.n_fft:
            raise EncoderInputError("batch contains a waveform shorter than one analysis frame")
        mel = self.log_mel(batch.padded_samples)
        out, conv_cache = self._conv_forward(mel)
        frame_counts = 1 + batch.true_lengths // self.cfg.hop
        feats = [
            FrameFeatures(matrix=out[i, : int(frame_counts[i])], frame_rate=self.frame_rate)
            for i in range(len(batch))
        ]
        return feats, (conv_cache, frame_counts, out.shape)

    def backward_batch(self, dfeats: Sequence[np.ndarray], cache) -> dict[str, np.ndarray]:
        """Gradients of the conv parameters given per-item feature gradients."""
        conv_cache, frame_counts, out_shape = cache
        c1, ca, c2 = conv_cache
        dout = np.zeros(out_shape, dtype=np.float64)
        for i, g in enumerate(dfeats):
            dout[i, : int(frame_counts[i])] = g
        da1, dw2, db2 = conv1d_same_backward(dout, c2)
        dh1 = relu_backward(da1, ca)
        _, dw1, db1 = conv1d_same_backward(dh1, c1)
        return {
            "conv1.weight": dw1,
            "conv1.bias": db1,
            "conv2.weight": dw2,
            "conv2.bias": db2,
        }

    # inference ----------------------------------------------------------

    def encode(self, wave: Waveform, sample_id: str | None = None) -> FrameFeatures:
        self._check_wave(wave)
        mel = self.log_mel(wave.samples[None, :])
        out, _ = self._conv_forward(mel)
        return FrameFeatures(matrix=out[0], frame_rate=self.frame_rate)

    def encode_batch(self, batch: WaveBatch, sample_ids: Sequence[str] | None = None) -> list[FrameFeatures]:
        feats, _ = self.forward_batch(batch)
        return feats


class PrecomputedEncoder:
    """Serves per-utterance feature matrices exported by an external model."""

    name = "precomputed"
    trainable = False
    requires_waveform = False

    def __init__(self, cfg: EncoderConfig):
        cfg.validate()
        if cfg.kind != "precomputed":
            raise ConfigError(f"PrecomputedEncoder got kind {cfg.kind!r}")
        self.cfg = cfg
        self.dim = cfg.dim
        self.frame_rate = float(cfg.frame_rate)
        self.expected_rate = cfg.sample_rate
        self.feature_dir = Path(cfg.feature_dir)
        self.params: dict[str, np.ndarray] = {}

    def feature_path(self, sample_id: str) -> Path:
        return self.feature_dir / f"{sample_id}.fmat"

    def encode(self, wave: Waveform | None = None, sample_id: str | None = None) -> FrameFeatures:
        if sample_id is None:
            raise FeatureFileError("precomputed encoder needs a sample_id to look up features")
        matrix = read_feature_matrix(self.feature_path(sample_id))
        if matrix.shape[1] != self.dim:
            raise FeatureFileError(
                f"{sample_id}: feature dim {matrix.shape[1]} != configured dim {self.dim}"
            )
        return FrameFeatures(matrix=matrix.astype(np.float64), frame_rate=self.frame_rate)

    def encode_batch(self, batch: WaveBatch | None = None, sample_ids: Sequence[str] | None = None) -> list[FrameFeatures]:
        if not sample_ids:
            raise FeatureFileError("precomputed encoder needs sample_ids for batch encoding")
        return [self.encode(None, sid) for sid in sample_ids]


def build_encoder(cfg: EncoderConfig, dtype=np.float32, params: dict[str, np.ndarray] | None = None):
    cfg.validate()
    if cfg.kind == "toy-spectral":
        return ToySpectralEncoder(cfg, dtype=dtype, params=params)
    return PrecomputedEncoder(cfg)
