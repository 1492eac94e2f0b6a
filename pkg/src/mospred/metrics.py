"""Evaluation metrics and report assembly.

Utterance-level: MSE, Pearson (LCC), Spearman (SRCC) over per-sample
(prediction, listener-averaged truth) pairs. System-level: the same after
averaging predictions and truths per system. Spearman uses average ranks for
ties. Correlation of a constant or length<2 vector raises
UndefinedCorrelationError instead of returning NaN: silent NaN corrupts
result tables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataValidationError,
    MissingPredictionError,
    UndefinedCorrelationError,
)
from .manifest import RatedUtterance, aggregate_by_listener


@dataclass
class EvaluationReport:
    test_set: str
    n_utterances: int
    n_systems: int
    utt_mse: float
    utt_lcc: float
    utt_srcc: float
    sys_mse: float | None = None
    sys_lcc: float | None = None
    sys_srcc: float | None = None

    def to_dict(self) -> dict:
        return {
            "test_set": self.test_set,
            "n_utterances": self.n_utterances,
            "n_systems": self.n_systems,
            "utt_mse": self.utt_mse,
            "utt_lcc": self.utt_lcc,
            "utt_srcc": self.utt_srcc,
            "sys_mse": self.sys_mse,
            "sys_lcc": self.sys_lcc,
            "sys_srcc": self.sys_srcc,
        }


def _check_pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"inputs must be equal-length vectors, got {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, true


def mse(pred, true) -> float:
    pred, true = _check_pair(pred, true)
    return float(((pred - true) ** 2).mean())


def _check_correlation_input(x: np.ndarray, name: str) -> None:
    if x.size < 2:
        raise UndefinedCorrelationError(f"{name}: need at least 2 points, got {x.size}")
    if np.all(x == x[0]):
        raise UndefinedCorrelationError(f"{name}: constant input has no defined correlation")


def lcc(pred, true) -> float:
    """Pearson linear correlation coefficient."""
    pred, true = _check_pair(pred, true)
    _check_correlation_input(pred, "pred")
    _check_correlation_input(true, "true")
    pc = pred - pred.mean()
    tc = true - true.mean()
    return float((pc @ tc) / np.sqrt((pc @ pc) * (tc @ tc)))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; ties get the mean of the rank positions they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(pred, true) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    pred, true = _check_pair(pred, true)
    _check_correlation_input(pred, "pred")
    _check_correlation_input(true, "true")
    return lcc(average_ranks(pred), average_ranks(true))


def aggregate_systems(
    rows: Sequence[RatedUtterance], predictions: Mapping[str, float]
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Per-system means of predictions and listener-averaged true scores.

    Returns (system ids in first-appearance order, pred means, true means).
    """
    per_sample = aggregate_by_listener(rows)
    by_system: dict[str, list[tuple[float, float]]] = {}
    for row in per_sample:
        if not row.system_id:
            raise DataValidationError(
                f"sample {row.sample_id!r} has no system_id; system metrics unavailable"
            )
        if row.sample_id not in predictions:
            raise MissingPredictionError([row.sample_id])
        by_system.setdefault(row.system_id, []).append(
            (float(predictions[row.sample_id]), row.score)
        )
    systems = list(by_system.keys())
    pred_means = np.array([np.mean([p for p, _ in by_system[s]]) for s in systems])
    true_means = np.array([np.mean([t for _, t in by_system[s]]) for s in systems])
    return systems, pred_means, true_means


def evaluate(
    predictions: Mapping[str, float],
    rows: Sequence[RatedUtterance],
    test_set: str = "test",
    out_csv: str | Path | None = None,
) -> EvaluationReport:
    """Score a prediction table against a manifest.

    Every distinct sample_id in ``rows`` must have a prediction; system-level
    metrics are computed exactly when the manifest carries system ids.
    Optionally writes the per-utterance prediction CSV (sample_id, score).
    """
    if len(rows) == 0:
        raise ValueError("empty test manifest")
    per_sample = aggregate_by_listener(rows)
    missing = [r.sample_id for r in per_sample if r.sample_id not in predictions]
    if missing:
        raise MissingPredictionError(missing)
    pred = np.array([float(predictions[r.sample_id]) for r in per_sample])
    true = np.array([r.score for r in per_sample])
    has_systems = all(r.system_id for r in per_sample)
    report = EvaluationReport(
        test_set=test_set,
        n_utterances=len(per_sample),
        n_systems=0,
        utt_mse=mse(pred, true),
        utt_lcc=lcc(pred, true),
        utt_srcc=srcc(pred, true),
    )
    if has_systems:
        systems, sys_pred, sys_true = aggregate_systems(rows, predictions)
        report.n_systems = len(systems)
        report.sys_mse = mse(sys_pred, sys_true)
        report.sys_lcc = lcc(sys_pred, sys_true)
        report.sys_srcc = srcc(sys_pred, sys_true)
    if out_csv is not None:
        write_predictions_csv({r.sample_id: float(predictions[r.sample_id]) for r in per_sample}, out_csv)
    return report


# prediction/report files -----------------------------------------------------


def write_predictions_csv(predictions: Mapping[str, float], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("sample_id", "score"))
        for sid, score in predictions.items():
            writer.writerow((sid, repr(float(score))))


def read_predictions_csv(path: str | Path) -> dict[str, float]:
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"prediction CSV not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != ("sample_id", "score"):
            raise DataValidationError(f"{path}: expected header sample_id,score")
        out: dict[str, float] = {}
        for record in reader:
            if len(record) != 2:
                raise DataValidationError(f"{path}: malformed row {record!r}")
            sid, score = record
            if sid in out:
                raise DataValidationError(f"{path}: duplicate sample_id {sid!r}")
            out[sid] = float(score)
    return out


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


_TABLE_FIELDS = ("utt_mse", "utt_lcc", "utt_srcc", "sys_mse", "sys_lcc", "sys_srcc")


def summarize_reports(reports: Sequence[EvaluationReport]) -> dict[str, float | None]:
    """Per-metric mean across test sets, skipping sets where a metric is absent."""
    summary: dict[str, float | None] = {}
    for name in _TABLE_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        summary[name] = float(np.mean(values)) if values else None
    return summary


def format_report_table(reports: Sequence[EvaluationReport], summary: Mapping[str, float | None] | None = None) -> str:
    """Human-readable fixed-width table, one row per test set."""
    header = f"{'test_set':<16}{'n_utt':>7}{'n_sys':>7}" + "".join(f"{f:>10}" for f in _TABLE_FIELDS)
    lines = [header, "-" * len(header)]

    def fmt(value) -> str:
        return f"{value:>10.4f}" if value is not None else f"{'-':>10}"

    for r in reports:
        lines.append(
            f"{r.test_set:<16}{r.n_utterances:>7}{r.n_systems:>7}"
            + "".join(fmt(getattr(r, f)) for f in _TABLE_FIELDS)
        )
    if summary is not None:
        lines.append(
            f"{'average':<16}{'':>7}{'':>7}" + "".join(fmt(summary.get(f)) for f in _TABLE_FIELDS)
        )
    return "\n".join(lines)
