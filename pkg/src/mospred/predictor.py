"""Bundles an encoder, a scoring head, and an optional retrieval datastore
into one loadable/saveable predictor."""

from __future__ import annotations

import hashlib
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .audio import Waveform, load_and_resample, resample
from .encoder import EncoderConfig, build_encoder
from .errors import CheckpointFormatError, UsageError
from .knn import Datastore, FusionConfig, fuse, knn_query, load_datastore, save_datastore
from .manifest import RatedUtterance, aggregate_by_listener
from .model import (
    HeadConfig,
    PredictorHead,
    ScorePrediction,
    load_checkpoint,
    merge_params,
    save_checkpoint,
    split_params,
)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Predictor:
    """A trained (or freshly initialized) quality predictor."""

    def __init__(
        self,
        encoder,
        head: PredictorHead,
        fusion: FusionConfig | None = None,
        datastore: Datastore | None = None,
        run_name: str | None = None,
        step: int | None = None,
    ):
        self.encoder = encoder
        self.head = head
        self.fusion = fusion or FusionConfig()
        self.datastore = datastore
        self.run_name = run_name
        self.step = step

    # prediction ---------------------------------------------------------

    def predict_wave(
        self,
        wave: Waveform | None,
        listener_id: str | None = None,
        dataset_id: str | None = None,
        sample_id: str | None = None,
    ) -> ScorePrediction:
        if wave is not None and self.encoder.requires_waveform:
            wave = resample(wave, self.encoder.expected_rate)
        feats = self.encoder.encode(wave, sample_id=sample_id)
        prediction = self.head.score_features(feats, listener_id=listener_id, dataset_id=dataset_id)
        if self.fusion.enabled and self.datastore is not None:
            key = feats.matrix.mean(axis=0)
            knn_score, _, _ = knn_query(
                self.datastore, key, self.fusion.k, self.fusion.temperature
            )
            prediction.utterance_score = fuse(
                prediction.utterance_score, knn_score, self.fusion.parametric_weight
            )
        return prediction

    def predict(
        self,
        wav_path: str | Path,
        listener_id: str | None = None,
        dataset_id: str | None = None,
    ) -> float:
        """Quality score for one audio file."""
        if not self.encoder.requires_waveform:
            raise UsageError(
                "this predictor uses precomputed features; predict by manifest so "
                "sample ids are available"
            )
        wave = load_and_resample(wav_path, self.encoder.expected_rate)
        return self.predict_wave(wave).utterance_score

    def predict_rows(
        self,
        rows: Sequence[RatedUtterance],
        wave_provider: Callable[[RatedUtterance], Waveform] | None = None,
    ) -> dict[str, float]:
        """One score per distinct sample_id, in first-appearance order."""
        out: dict[str, float] = {}
        for row in aggregate_by_listener(rows):
            wave = None
            if self.encoder.requires_waveform:
                if wave_provider is not None:
                    wave = wave_provider(row)
                else:
                    wave = load_and_resample(row.wav_path, self.encoder.expected_rate)
            dataset_id = row.dataset_id if self.head.cfg.dataset_calibration else None
            out[row.sample_id] = self.predict_wave(
                wave, dataset_id=dataset_id, sample_id=row.sample_id
            ).utterance_score
        return out

    # persistence ----------------------------------------------------------

    def config_snapshot(self) -> dict:
        return {
            "encoder": asdict(self.encoder.cfg),
            "head": asdict(self.head.cfg),
            "listener_ids": list(self.head.listener_ids),
            "dataset_ids": list(self.head.dataset_ids),
            "fusion": asdict(self.fusion),
            "run_name": self.run_name,
            "step": self.step,
        }

    def merged_params(self) -> dict[str, np.ndarray]:
        return merge_params(self.encoder.params, self.head.params)

    def save(self, path: str | Path, with_datastore: bool = True) -> None:
        save_checkpoint(path, self.config_snapshot(), self.merged_params())
        if with_datastore and self.datastore is not None:
            save_datastore(self.datastore, path)

    @classmethod
    def from_checkpoint(cls, path: str | Path, feature_dir: str | Path | None = None) -> "Predictor":
        config, params = load_checkpoint(path)
        return cls.from_state(config, params, checkpoint_path=path, feature_dir=feature_dir)

    @classmethod
    def from_state(
        cls,
        config: dict,
        params: Mapping[str, np.ndarray],
        checkpoint_path: str | Path | None = None,
        feature_dir: str | Path | None = None,
    ) -> "Predictor":
        try:
            enc_cfg = EncoderConfig(**config["encoder"])
            head_cfg = HeadConfig(**config["head"])
            fusion = FusionConfig(**config["fusion"])
        except (KeyError, TypeError) as exc:
            raise CheckpointFormatError(f"checkpoint config invalid: {exc}") from exc
        if feature_dir is not None:
            enc_cfg.feature_dir = str(feature_dir)
        encoder = build_encoder(enc_cfg, params=split_params(params, "encoder.") or None)
        head = PredictorHead(
            input_dim=encoder.dim,
            cfg=head_cfg,
            listener_ids=config.get("listener_ids") or [],
            dataset_ids=config.get("dataset_ids") or [],
            params=split_params(params, "head."),
        )
        datastore = load_datastore(checkpoint_path) if checkpoint_path is not None else None
        return cls(
            encoder=encoder,
            head=head,
            fusion=fusion,
            datastore=datastore,
            run_name=config.get("run_name"),
            step=config.get("step"),
        )


def build_predictor(
    enc_cfg: EncoderConfig,
    head_cfg: HeadConfig,
    fusion: FusionConfig | None = None,
    listener_ids: Sequence[str] | None = None,
    dataset_ids: Sequence[str] | None = None,
    run_name: str | None = None,
) -> Predictor:
    """Fresh, randomly initialized predictor from config dataclasses."""
    encoder = build_encoder(enc_cfg)
    head = PredictorHead(
        input_dim=encoder.dim,
        cfg=head_cfg,
        listener_ids=listener_ids,
        dataset_ids=dataset_ids,
    )
    return Predictor(encoder=encoder, head=head, fusion=fusion, run_name=run_name)
