"""Retrieval-augmented scoring: datastore build, kNN query, score fusion.

The datastore maps an utterance-level key (time-mean of encoder features) to
the listener-averaged human score. Queries run an exhaustive exact scan
(Euclidean distance); toolkit-scale stores are small enough that exactness
beats an approximate index. The retrieved estimate is blended with the
parametric prediction by a fixed convex weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import Waveform, load_and_resample
from .encoder import read_feature_matrix, write_feature_matrix
from .errors import ConfigError
from .manifest import RatedUtterance, aggregate_by_listener


@dataclass
class FusionConfig:
    enabled: bool = False
    k: int = 8
    temperature: float = 1.0
    parametric_weight: float = 0.5  # 1.0 -> parametric only, 0.0 -> retrieval only

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("fusion k must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("fusion temperature must be positive")
        if not 0.0 <= self.parametric_weight <= 1.0:
            raise ConfigError("parametric_weight must lie in [0, 1]")


@dataclass
class Datastore:
    keys: np.ndarray  # (N, D)
    values: np.ndarray  # (N,)
    sample_ids: list[str]

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.keys.ndim != 2:
            raise ValueError("keys must be (N, D)")
        if len(self.values) != len(self.keys) or len(self.sample_ids) != len(self.keys):
            raise ValueError("keys, values, and sample_ids must have equal length")

    def __len__(self) -> int:
        return len(self.values)


def build_datastore(
    encoder,
    rows: Sequence[RatedUtterance],
    wave_provider: Callable[[RatedUtterance], Waveform] | None = None,
) -> Datastore:
    """One entry per distinct training sample; scores are listener-averaged."""
    if len(rows) == 0:
        raise ValueError("cannot build a datastore from an empty training set")
    if wave_provider is None:
        wave_provider = lambda row: load_and_resample(row.wav_path, encoder.expected_rate)
    keys, values, ids = [], [], []
    for row in aggregate_by_listener(rows):
        wave = wave_provider(row) if encoder.requires_waveform else None
        feats = encoder.encode(wave, sample_id=row.sample_id)
        keys.append(feats.matrix.mean(axis=0))
        values.append(row.score)
        ids.append(row.sample_id)
    return Datastore(keys=np.stack(keys), values=np.array(values), sample_ids=ids)


def knn_query(
    store: Datastore, query_key: np.ndarray, k: int, temperature: float
) -> tuple[float, list[str], np.ndarray]:
    """Softmax(-distance/temperature)-weighted mean of the k nearest values.

    Returns (score, neighbor sample_ids, neighbor distances); distance ties
    break by insertion order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(store):
        raise ValueError(f"k={k} exceeds datastore size {len(store)}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    query_key = np.asarray(query_key, dtype=np.float64)
    distances = np.sqrt(((store.keys - query_key) ** 2).sum(axis=1))
    nearest = np.argsort(distances, kind="stable")[:k]
    d = distances[nearest]
    logits = -d / temperature
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    score = float(weights @ store.values[nearest])
    return score, [store.sample_ids[i] for i in nearest], d


def fuse(parametric: float, knn_score: float, parametric_weight: float) -> float:
    """Convex blend: weight * parametric + (1 - weight) * retrieved."""
    if not 0.0 <= parametric_weight <= 1.0:
        raise ValueError("parametric_weight must lie in [0, 1]")
    return parametric_weight * parametric + (1.0 - parametric_weight) * knn_score


def tune_parametric_weight(
    parametric: np.ndarray,
    knn_scores: np.ndarray,
    targets: np.ndarray,
    grid: np.ndarray | None = None,
) -> float:
    """Grid-search the fusion weight minimizing dev-set MSE; first best wins."""
    parametric = np.asarray(parametric, dtype=np.float64)
    knn_scores = np.asarray(knn_scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if grid is None:
        grid = np.linspace(0.0, 1.0, 21)
    best_weight, best_mse = None, np.inf
    for w in grid:
        fused = w * parametric + (1.0 - w) * knn_scores
        mse = float(((fused - targets) ** 2).mean())
        if mse < best_mse:
            best_weight, best_mse = float(w), mse
    return best_weight


# persistence ---------------------------------------------------------------


def datastore_paths(checkpoint_path: str | Path) -> tuple[Path, Path]:
    base = Path(checkpoint_path)
    return base.with_suffix(base.suffix + ".knn.fmat"), base.with_suffix(base.suffix + ".knn.csv")


def save_datastore(store: Datastore, checkpoint_path: str | Path) -> None:
    """Persist next to a checkpoint: keys as a feature matrix, values as CSV."""
    keys_path, sidecar_path = datastore_paths(checkpoint_path)
    write_feature_matrix(keys_path, store.keys)
    with sidecar_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("sample_id", "score"))
        for sid, value in zip(store.sample_ids, store.values):
            writer.writerow((sid, repr(float(value))))


def load_datastore(checkpoint_path: str | Path) -> Datastore | None:
    """Load the sidecar datastore if present; None when absent."""
    keys_path, sidecar_path = datastore_paths(checkpoint_path)
    if not keys_path.is_file() or not sidecar_path.is_file():
        return None
    keys = read_feature_matrix(keys_path).astype(np.float64)
    ids, values = [], []
    with sidecar_path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        for sid, value in reader:
            ids.append(sid)
            values.append(float(value))
    return Datastore(keys=keys, values=np.array(values), sample_ids=ids)
