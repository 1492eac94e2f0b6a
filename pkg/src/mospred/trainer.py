"""Mini-batch training with validation-driven early stopping.

The loop is single-threaded and fully deterministic given (config, seed,
platform): batch order, the mean-listener coin flips, and parameter inits all
come from one seeded generator. A best-k list of checkpoints is maintained on
the validation selection metric; training halts when the list has not changed
for ``patience_steps`` optimizer steps, or at ``max_steps``.

``train.num_workers`` is reserved for a prefetching data pipeline and is
currently unused; batch assembly stays synchronous for determinism.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import Waveform, crop_head, load_and_resample, repetitive_pad
from .errors import ConfigError, TrainingDivergedError, UndefinedCorrelationError
from .knn import FusionConfig
from .losses import LossConfig, total_loss_and_grad
from .manifest import RatedUtterance, aggregate_by_listener, mean_score_by_sample
from .metrics import lcc, mse, srcc, aggregate_systems
from .model import PredictorHead, load_checkpoint, range_clip, range_clip_grad, save_checkpoint
from .optim import MomentumSGD
from .predictor import Predictor

HIGHER_BETTER = {"utt_lcc", "utt_srcc", "sys_srcc"}
LOWER_BETTER = {"utt_mse", "loss"}
SELECTION_METRICS = HIGHER_BETTER | LOWER_BETTER


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 0.001
    momentum: float = 0.9
    max_steps: int = 100000
    patience_steps: int = 2000
    keep_best: int = 5
    selection_metric: str = "utt_srcc"
    val_interval: int = 250
    seed: int = 1000
    mean_listener_prob: float = 0.5  # chance a batch trains the mean-listener row
    rating_rows: str = "auto"  # "auto" | "listener" | "averaged"
    crop_seconds: float | None = None  # training-time head crop; off at evaluation
    cache_audio: bool = True
    num_workers: int = 0  # reserved; loop is synchronous

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.patience_steps < 1:
            raise ConfigError("patience_steps must be >= 1")
        if self.keep_best < 1:
            raise ConfigError("keep_best must be >= 1")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(
                f"selection_metric must be one of {sorted(SELECTION_METRICS)}, "
                f"got {self.selection_metric!r}"
            )
        if self.val_interval < 1:
            raise ConfigError("val_interval must be >= 1")
        if not 0.0 <= self.mean_listener_prob <= 1.0:
            raise ConfigError("mean_listener_prob must lie in [0, 1]")
        if self.rating_rows not in ("auto", "listener", "averaged"):
            raise ConfigError("rating_rows must be auto, listener, or averaged")
        if self.crop_seconds is not None and self.crop_seconds <= 0:
            raise ConfigError("crop_seconds must be positive when set")


@dataclass(frozen=True, slots=True)
class BestEntry:
    value: float
    step: int
    ref: str  # checkpoint path (or empty in replay harnesses)


@dataclass
class TrainState:
    step: int = 0
    best_list: list[BestEntry] = field(default_factory=list)
    last_improvement_step: int = 0
    rng_state: dict | None = None


def update_early_stop(
    state: TrainState,
    new_metric: float,
    step: int,
    cfg: TrainConfig,
    checkpoint_ref: str = "",
) -> tuple[TrainState, bool]:
    """Fold one validation result into the best-k list and the patience clock.

    The metric enters the list when it is strictly better than the worst kept
    entry (or the list is not full yet); any entry update resets the clock.
    ``should_stop`` is true once ``step - last_improvement_step`` reaches the
    patience.
    """
    higher = cfg.selection_metric in HIGHER_BETTER
    best = list(state.best_list)
    improved = len(best) < cfg.keep_best or (
        new_metric > best[-1].value if higher else new_metric < best[-1].value
    )
    if improved:
        best.append(BestEntry(value=float(new_metric), step=step, ref=checkpoint_ref))
        best.sort(key=(lambda e: (-e.value, e.step)) if higher else (lambda e: (e.value, e.step)))
        best = best[: cfg.keep_best]
    new_state = replace(
        state,
        step=step,
        best_list=best,
        last_improvement_step=step if improved else state.last_improvement_step,
    )
    should_stop = step - new_state.last_improvement_step >= cfg.patience_steps
    return new_state, should_stop


def visualize_validation(
    predictions,
    targets,
    image_path: str | Path,
    csv_path: str | Path | None = None,
    *,
    sample_ids: Sequence[str] | None = None,
    score_range: tuple[float, float] | None = None,
) -> tuple[Path, Path]:
    """Scatter predicted-vs-true scores with the identity line, plus a CSV."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("nothing to visualize: empty predictions")
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    image_path = Path(image_path)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    if csv_path is None:
        csv_path = image_path.with_suffix(".csv")
    csv_path = Path(csv_path)
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(predictions))]

    with csv_path.open("w", encoding="utf-8", newline="") as f:
        f.write("sample_id,prediction,target\n")
        for sid, p, t in zip(sample_ids, predictions, targets):
            f.write(f"{sid},{float(p)!r},{float(t)!r}\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if score_range is None:
        lo = float(min(predictions.min(), targets.min())) - 0.25
        hi = float(max(predictions.max(), targets.max())) + 0.25
    else:
        lo, hi = score_range
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([lo, hi], [lo, hi], color="gray", linewidth=1, zorder=1)
    ax.scatter(targets, predictions, s=12, alpha=0.7, zorder=2)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("human score")
    ax.set_ylabel("predicted score")
    ax.grid(True, linewidth=0.3)
    fig.tight_layout()
    fig.savefig(image_path, dpi=100)
    plt.close(fig)
    return image_path, csv_path


def average_checkpoints(sources: Sequence) -> tuple[dict, dict[str, np.ndarray]]:
    """Parameter-wise mean of checkpoints (paths or (config, params) tuples)."""
    if len(sources) == 0:
        raise ValueError("need at least one checkpoint")
    loaded = [load_checkpoint(s) if isinstance(s, (str, Path)) else s for s in sources]
    config, first = loaded[0]
    names = sorted(first.keys())
    for _, params in loaded[1:]:
        if sorted(params.keys()) != names:
            raise ValueError("checkpoints hold different parameter sets")
        for name in names:
            if params[name].shape != first[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: {params[name].shape} vs {first[name].shape}"
                )
    averaged = {
        name: np.mean([params[name].astype(np.float64) for _, params in loaded], axis=0).astype(
            first[name].dtype
        )
        for name in names
    }
    return config, averaged


class _AudioCache:
    """Load -> resample -> (optional) crop, with an in-memory cache."""

    def __init__(self, target_rate: int, crop_seconds: float | None, enabled: bool):
        self.target_rate = target_rate
        self.crop_seconds = crop_seconds
        self.enabled = enabled
        self._store: dict[tuple[str, bool], Waveform] = {}

    def get(self, row: RatedUtterance, crop: bool) -> Waveform:
        key = (row.wav_path, crop and self.crop_seconds is not None)
        cached = self._store.get(key)
        if cached is not None:
            return cached
        wave = load_and_resample(row.wav_path, self.target_rate)
        if crop and self.crop_seconds is not None:
            wave = crop_head(wave, self.crop_seconds)
        if self.enabled:
            self._store[key] = wave
        return wave


def _dev_metrics(
    predictor: Predictor, dev_rows: Sequence[RatedUtterance], wave_provider
) -> tuple[dict[str, float | None], list[str], np.ndarray, np.ndarray]:
    per_sample = aggregate_by_listener(dev_rows)
    ids = [r.sample_id for r in per_sample]
    preds = np.array(
        [
            predictor.predict_wave(
                wave_provider(r) if predictor.encoder.requires_waveform else None,
                dataset_id=r.dataset_id if predictor.head.cfg.dataset_calibration else None,
                sample_id=r.sample_id,
            ).utterance_score
            for r in per_sample
        ]
    )
    targets = np.array([r.score for r in per_sample])
    values: dict[str, float | None] = {"loss": float(np.abs(preds - targets).mean())}
    values["utt_mse"] = mse(preds, targets)
    for name, fn in (("utt_lcc", lcc), ("utt_srcc", srcc)):
        try:
            values[name] = fn(preds, targets)
        except UndefinedCorrelationError:
            values[name] = None
    if all(r.system_id for r in per_sample):
        predictions = dict(zip(ids, preds))
        _, sys_pred, sys_true = aggregate_systems(dev_rows, predictions)
        try:
            values["sys_srcc"] = srcc(sys_pred, sys_true)
        except UndefinedCorrelationError:
            values["sys_srcc"] = None
    return values, ids, preds, targets


def train(
    encoder,
    head: PredictorHead,
    train_rows: Sequence[RatedUtterance],
    dev_rows: Sequence[RatedUtterance],
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    out_dir: str | Path,
    *,
    fusion_cfg: FusionConfig | None = None,
    run_name: str | None = None,
    wave_provider: Callable[[RatedUtterance, bool], Waveform] | None = None,
    validation_metric_fn: Callable[[int], float] | None = None,
) -> TrainState:
    """Optimize encoder (when trainable) and head jointly; returns the final state.

    ``validation_metric_fn`` replaces real validation with an injected metric
    stream (testing hook for the early-stopping machinery).
    """
    train_cfg.validate()
    loss_cfg.validate()
    if len(train_rows) == 0:
        raise ValueError("empty training manifest")
    if len(dev_rows) == 0 and validation_metric_fn is None:
        raise ValueError("empty validation manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    listener_mode = head.cfg.listener_modeling
    rows_mode = train_cfg.rating_rows
    if rows_mode == "auto":
        rows_mode = "listener" if listener_mode else "averaged"
    rows = list(train_rows) if rows_mode == "listener" else aggregate_by_listener(train_rows)
    sample_means = mean_score_by_sample(train_rows)

    if train_cfg.selection_metric == "sys_srcc" and validation_metric_fn is None:
        if not all(r.system_id for r in dev_rows):
            raise ConfigError("selection_metric sys_srcc needs system ids in the dev manifest")

    audio = _AudioCache(
        getattr(encoder, "expected_rate", 16000), train_cfg.crop_seconds, train_cfg.cache_audio
    )
    if wave_provider is None:
        wave_provider = audio.get

    predictor = Predictor(
        encoder=encoder, head=head, fusion=fusion_cfg, run_name=run_name, step=0
    )
    trainable = dict(predictor.merged_params()) if encoder.trainable else {
        f"head.{k}": v for k, v in head.params.items()
    }
    optimizer = MomentumSGD(trainable, lr=train_cfg.lr, momentum=train_cfg.momentum)
    rng = np.random.default_rng(train_cfg.seed)

    state = TrainState()
    log_path = out_dir / "train_log.jsonl"
    order = rng.permutation(len(rows))
    cursor = 0
    batch_size = min(train_cfg.batch_size, len(rows))

    def save_step_checkpoint(path: Path, step: int) -> None:
        predictor.step = step
        save_checkpoint(path, predictor.config_snapshot(), predictor.merged_params())

    with log_path.open("w", encoding="utf-8") as log:

        def log_record(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            log.flush()

        for step in range(1, train_cfg.max_steps + 1):
            if cursor + batch_size > len(order):
                order = rng.permutation(len(rows))
                cursor = 0
            batch_rows = [rows[i] for i in order[cursor : cursor + batch_size]]
            cursor += batch_size
            mean_batch = listener_mode and rng.random() < train_cfg.mean_listener_prob

            if mean_batch:
                targets = np.array([sample_means[r.sample_id] for r in batch_rows])
                listener_idx = [0] * len(batch_rows)
            else:
                targets = np.array([r.score for r in batch_rows])
                listener_idx = [
                    head.listener_index(r.listener_id) if listener_mode else -1
                    for r in batch_rows
                ]
            dataset_idx = [
                head.dataset_index(r.dataset_id) if head.cfg.dataset_calibration else -1
                for r in batch_rows
            ]

            def abort_diverged(detail: str):
                snapshot = out_dir / "diverged.ckpt"
                save_step_checkpoint(snapshot, step)
                log_record({"kind": "diverged", "step": step, "detail": detail})
                raise TrainingDivergedError(
                    f"{detail} at step {step}; diagnostic snapshot at {snapshot}"
                )

            try:
                if encoder.requires_waveform:
                    waves = [wave_provider(r, True) for r in batch_rows]
                    batch = repetitive_pad(waves)
                    feats_list, enc_cache = encoder.forward_batch(batch)
                else:
                    feats_list = [
                        encoder.encode(None, sample_id=r.sample_id) for r in batch_rows
                    ]
                    enc_cache = None
            except ValueError:
                # inputs are validated finite, so non-finite features mean the
                # parameters blew up; anything else is a genuine input error
                if any(
                    not np.all(np.isfinite(p)) for p in optimizer.params.values()
                ):
                    abort_diverged("non-finite parameters")
                raise

            preds = np.empty(len(batch_rows))
            clip_gradients = np.ones(len(batch_rows))
            head_caches = []
            for i, feats in enumerate(feats_list):
                frame_scores, cache = head.forward(feats, listener_idx[i], dataset_idx[i])
                head_caches.append((frame_scores, cache))
                pooled = float(frame_scores.mean())
                if head.clip_range is not None:
                    preds[i] = range_clip(pooled, *head.clip_range)
                    clip_gradients[i] = range_clip_grad(pooled, *head.clip_range)
                else:
                    preds[i] = pooled

            if not np.all(np.isfinite(preds)):
                abort_diverged("non-finite predictions")
            total, breakdown, dpred = total_loss_and_grad(preds, targets, loss_cfg)
            if not np.isfinite(total):
                abort_diverged("non-finite loss")

            head_grads = {k: np.zeros(p.shape, dtype=np.float64) for k, p in head.params.items()}
            dfeats_list = []
            for i, (frame_scores, cache) in enumerate(head_caches):
                dscore = dpred[i] * clip_gradients[i]
                dframes = np.full(len(frame_scores), dscore / len(frame_scores))
                grads_i, dfeats = head.backward(dframes, cache)
                for k, g in grads_i.items():
                    head_grads[k] += g
                dfeats_list.append(dfeats)
            grads = {f"head.{k}": v for k, v in head_grads.items()}
            if encoder.trainable:
                enc_grads = encoder.backward_batch(dfeats_list, enc_cache)
                grads.update({f"encoder.{k}": v for k, v in enc_grads.items()})
            optimizer.step(grads)

            log_record(
                {
                    "kind": "train",
                    "step": step,
                    "loss": total,
                    "primary": breakdown["primary"],
                    "contrastive": breakdown["contrastive"],
                }
            )

            if step % train_cfg.val_interval == 0:
                if validation_metric_fn is not None:
                    value: float | None = float(validation_metric_fn(step))
                    val_record = {"kind": "val", "step": step, train_cfg.selection_metric: value}
                else:
                    values, ids, dev_preds, dev_targets = _dev_metrics(
                        predictor, dev_rows, lambda r: wave_provider(r, False)
                    )
                    value = values.get(train_cfg.selection_metric)
                    visualize_validation(
                        dev_preds,
                        dev_targets,
                        out_dir / "validation_scatter.png",
                        out_dir / "validation_predictions.csv",
                        sample_ids=ids,
                        score_range=head.clip_range,
                    )
                    val_record = {"kind": "val", "step": step, **values}

                if value is not None:
                    ckpt = out_dir / f"checkpoint-step{step}.ckpt"
                    before = {e.ref for e in state.best_list}
                    state, should_stop = update_early_stop(
                        state, value, step, train_cfg, checkpoint_ref=str(ckpt)
                    )
                    after = {e.ref for e in state.best_list}
                    if str(ckpt) in after:
                        save_step_checkpoint(ckpt, step)
                    for stale in before - after:
                        Path(stale).unlink(missing_ok=True)
                else:
                    state = replace(state, step=step)
                    should_stop = (
                        step - state.last_improvement_step >= train_cfg.patience_steps
                    )
                val_record["improved"] = state.last_improvement_step == step
                log_record(val_record)
                if should_stop:
                    log_record({"kind": "early_stop", "step": step})
                    break
            state = replace(state, step=step)

    state = replace(state, rng_state=rng.bit_generator.state)
    save_step_checkpoint(out_dir / "last.ckpt", state.step)
    best_path = out_dir / "best.ckpt"
    if state.best_list:
        shutil.copyfile(state.best_list[0].ref, best_path)
    else:
        save_step_checkpoint(best_path, state.step)
    return state
