"""Scoring head and prediction assembly.

Pipeline per utterance: encoder features -> per-frame decoder (optionally
conditioned on a listener embedding and a per-dataset affine calibration) ->
arithmetic-mean time pooling -> optional range clipping.

Checkpoints are zip archives with a ``meta.json`` describing the model and one
float32 ``.npy`` entry per parameter tensor; see ``save_checkpoint``.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio import Waveform
from .encoder import FrameFeatures
from .errors import CheckpointFormatError, ConfigError, ListenerLookupError, UsageError
from .nnops import ACTIVATIONS, glorot_uniform, linear_backward, linear_forward

MEAN_LISTENER = "__mean__"
CHECKPOINT_FORMAT = "mospred-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class HeadConfig:
    decoder: str = "mlp"  # "linear" | "mlp"
    hidden: int = 256
    activation: str = "tanh"
    init_bias: float = 3.0  # initial decoder output, roughly mid rating scale
    clip_enabled: bool = True
    clip_min: float | None = None  # None -> dataset score range at build time
    clip_max: float | None = None
    listener_modeling: bool = False
    listener_dim: int = 32
    strict_listeners: bool = False
    dataset_calibration: bool = False
    seed: int = 1

    def validate(self) -> None:
        if self.decoder not in ("linear", "mlp"):
            raise ConfigError(f"unknown decoder {self.decoder!r}")
        if self.decoder == "mlp" and self.hidden <= 0:
            raise ConfigError("hidden size must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.clip_min is not None and self.clip_max is not None:
            if not self.clip_min < self.clip_max:
                raise ConfigError("clip_min must be < clip_max")
        if self.listener_modeling and self.listener_dim <= 0:
            raise ConfigError("listener_dim must be positive")


@dataclass
class ScorePrediction:
    utterance_score: float
    frame_scores: np.ndarray
    listener_id: str | None = None
    dataset_id: str | None = None


def time_pool(frame_scores: np.ndarray) -> float:
    """Arithmetic mean over frames."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.size == 0:
        raise ValueError("cannot pool an empty frame-score sequence")
    return float(frame_scores.mean())


def range_clip(score: float, lo: float, hi: float) -> float:
    if not lo < hi:
        raise ValueError(f"clip range must satisfy lo < hi, got ({lo}, {hi})")
    return float(min(max(score, lo), hi))


def range_clip_grad(score: float, lo: float, hi: float) -> float:
    """Subgradient of range_clip: 1 inside [lo, hi], 0 outside."""
    return 1.0 if lo <= score <= hi else 0.0


class PredictorHead:
    """Frame decoder + pooling + clipping with optional conditioning tables."""

    def __init__(
        self,
        input_dim: int,
        cfg: HeadConfig,
        listener_ids: Sequence[str] | None = None,
        dataset_ids: Sequence[str] | None = None,
        dtype=np.float32,
        params: dict[str, np.ndarray] | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.input_dim = input_dim
        if cfg.listener_modeling:
            listener_ids = list(listener_ids or [])
            if MEAN_LISTENER in listener_ids:
                raise ConfigError(f"{MEAN_LISTENER!r} is reserved")
            self.listener_ids = listener_ids
            self._listener_index = {MEAN_LISTENER: 0}
            self._listener_index.update({lid: i + 1 for i, lid in enumerate(listener_ids)})
        else:
            self.listener_ids = []
            self._listener_index = {}
        if cfg.dataset_calibration:
            self.dataset_ids = list(dataset_ids or [])
            self._dataset_index = {did: i for i, did in enumerate(self.dataset_ids)}
        else:
            self.dataset_ids = []
            self._dataset_index = {}
        if cfg.clip_enabled:
            if cfg.clip_min is None or cfg.clip_max is None:
                raise ConfigError(
                    "clip range unresolved; set clip_min/clip_max (the config loader "
                    "fills them from the dataset score range)"
                )
            self.clip_range = (float(cfg.clip_min), float(cfg.clip_max))
        else:
            self.clip_range = None
        if params is not None:
            self.params = {k: np.asarray(v) for k, v in params.items()}
        else:
            self.params = self._init_params(dtype)

    def _init_params(self, dtype) -> dict[str, np.ndarray]:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        dim = self.input_dim + (cfg.listener_dim if cfg.listener_modeling else 0)
        params: dict[str, np.ndarray] = {}
        if cfg.decoder == "mlp":
            params["hidden.weight"] = glorot_uniform(rng, (dim, cfg.hidden), dim, cfg.hidden, dtype)
            params["hidden.bias"] = np.zeros(cfg.hidden, dtype=dtype)
            out_in = cfg.hidden
        else:
            out_in = dim
        # small output init keeps initial pooled scores near init_bias, well
        # inside the clip range where the subgradient is 1 and training flows
        params["out.weight"] = 0.05 * glorot_uniform(rng, (out_in, 1), out_in, 1, dtype)
        params["out.bias"] = np.full(1, cfg.init_bias, dtype=dtype)
        if cfg.listener_modeling:
            n = len(self.listener_ids) + 1  # row 0 is the mean listener
            params["listener.embeddings"] = (
                rng.standard_normal((n, cfg.listener_dim)) * 0.1
            ).astype(dtype)
        if cfg.dataset_calibration:
            m = max(len(self.dataset_ids), 1)
            params["dataset.scale"] = np.ones(m, dtype=dtype)
            params["dataset.shift"] = np.zeros(m, dtype=dtype)
        return params

    # id resolution ------------------------------------------------------

    def listener_index(self, listener_id: str | None) -> int:
        if not self.cfg.listener_modeling:
            if listener_id is not None:
                raise ListenerLookupError(
                    f"listener_id {listener_id!r} given but listener modeling is disabled"
                )
            return -1
        if listener_id is None:
            return 0
        idx = self._listener_index.get(listener_id)
        if idx is None:
            if self.cfg.strict_listeners:
                raise ListenerLookupError(f"unknown listener_id {listener_id!r}")
            return 0  # relaxed mode: fall back to the mean listener
        return idx

    def dataset_index(self, dataset_id: str | None) -> int:
        if not self.cfg.dataset_calibration or dataset_id is None:
            return -1
        idx = self._dataset_index.get(dataset_id)
        if idx is None:
            raise ConfigError(f"unknown dataset_id {dataset_id!r} for calibration")
        return idx

    # forward/backward -----------------------------------------------------

    def forward(self, feats: FrameFeatures, listener_idx: int = -1, dataset_idx: int = -1):
        """Per-frame scores (T,) plus a cache for backward()."""
        x = feats.matrix
        if x.shape[1] != self.input_dim:
            raise ValueError(f"feature dim {x.shape[1]} != head input dim {self.input_dim}")
        if self.cfg.listener_modeling:
            if listener_idx < 0:
                raise ListenerLookupError("listener modeling enabled but no listener resolved")
            emb = np.asarray(self.params["listener.embeddings"][listener_idx], dtype=np.float64)
            x = np.concatenate([x, np.broadcast_to(emb, (x.shape[0], emb.shape[0]))], axis=1)
        act_fwd, _ = ACTIVATIONS[self.cfg.activation]
        if self.cfg.decoder == "mlp":
            h, c_hidden = linear_forward(x, self.params["hidden.weight"], self.params["hidden.bias"])
            a, c_act = act_fwd(h)
            s, c_out = linear_forward(a, self.params["out.weight"], self.params["out.bias"])
        else:
            c_hidden = c_act = None
            s, c_out = linear_forward(x, self.params["out.weight"], self.params["out.bias"])
        scores = s[:, 0]
        if dataset_idx >= 0:
            scale = float(self.params["dataset.scale"][dataset_idx])
            shift = float(self.params["dataset.shift"][dataset_idx])
            scores = scale * scores + shift
        else:
            scale = None
        cache = (c_hidden, c_act, c_out, listener_idx, dataset_idx, scale, s[:, 0])
        return scores, cache

    def backward(self, dscores: np.ndarray, cache):
        """Parameter gradients plus the gradient w.r.t. the input features."""
        c_hidden, c_act, c_out, listener_idx, dataset_idx, scale, raw_scores = cache
        grads: dict[str, np.ndarray] = {name: np.zeros_like(p, dtype=np.float64) for name, p in self.params.items()}
        ds = np.asarray(dscores, dtype=np.float64)
        if dataset_idx >= 0:
            grads["dataset.scale"][dataset_idx] = float(ds @ raw_scores)
            grads["dataset.shift"][dataset_idx] = float(ds.sum())
            ds = ds * scale
        _, act_bwd = ACTIVATIONS[self.cfg.activation]
        dout = ds[:, None]
        if self.cfg.decoder == "mlp":
            da, dw_out, db_out = linear_backward(dout, c_out)
            grads["out.weight"] = dw_out
            grads["out.bias"] = db_out
            dh = act_bwd(da, c_act)
            dx, dw_h, db_h = linear_backward(dh, c_hidden)
            grads["hidden.weight"] = dw_h
            grads["hidden.bias"] = db_h
        else:
            dx, dw_out, db_out = linear_backward(dout, c_out)
            grads["out.weight"] = dw_out
            grads["out.bias"] = db_out
        if self.cfg.listener_modeling:
            emb_dim = self.cfg.listener_dim
            grads["listener.embeddings"][listener_idx] = dx[:, -emb_dim:].sum(axis=0)
            dx = dx[:, :-emb_dim]
        return grads, dx

    # public decode ------------------------------------------------------

    def decode_frames(
        self,
        feats: FrameFeatures,
        listener_id: str | None = None,
        dataset_id: str | None = None,
    ) -> np.ndarray:
        """Frame-wise score sequence for one utterance."""
        scores, _ = self.forward(
            feats,
            listener_idx=self.listener_index(listener_id),
            dataset_idx=self.dataset_index(dataset_id),
        )
        return scores

    def score_features(
        self,
        feats: FrameFeatures,
        listener_id: str | None = None,
        dataset_id: str | None = None,
    ) -> ScorePrediction:
        frame_scores = self.decode_frames(feats, listener_id, dataset_id)
        score = time_pool(frame_scores)
        if self.clip_range is not None:
            score = range_clip(score, *self.clip_range)
        return ScorePrediction(
            utterance_score=score,
            frame_scores=frame_scores,
            listener_id=listener_id,
            dataset_id=dataset_id,
        )


def predict_utterance(
    head: PredictorHead,
    encoder,
    wave: Waveform | None,
    listener_id: str | None = None,
    dataset_id: str | None = None,
    sample_id: str | None = None,
) -> ScorePrediction:
    """Full composition: encode -> decode -> pool -> clip."""
    feats = encoder.encode(wave, sample_id=sample_id)
    return head.score_features(feats, listener_id=listener_id, dataset_id=dataset_id)


# checkpoint archive -------------------------------------------------------

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_zip_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path: str | Path, config: dict, params: Mapping[str, np.ndarray]) -> None:
    """Write a deterministic zip archive: meta.json + float32 param tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "params": sorted(params.keys()),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_zip_entry(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        for name in sorted(params.keys()):
            buf = io.BytesIO()
            np.save(buf, np.asarray(params[name], dtype=np.float32))
            _write_zip_entry(zf, f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointFormatError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointFormatError(
                    f"{path}: unsupported checkpoint version {meta.get('version')}"
                )
            params = {}
            for name in meta["params"]:
                arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")))
                params[name] = arr
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed checkpoint ({exc})") from exc
    return meta["config"], params


def split_params(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix)
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix)}


def merge_params(encoder_params: Mapping[str, np.ndarray], head_params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    merged = {f"encoder.{k}": v for k, v in encoder_params.items()}
    merged.update({f"head.{k}": v for k, v in head_params.items()})
    return merged
