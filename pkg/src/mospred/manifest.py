"""CSV manifests: the canonical data-interchange format of the toolkit.

A manifest is a UTF-8, comma-separated CSV with a mandatory header row and
exactly these columns, in this order::

    wav_path,sample_id,system_id,listener_id,score,dataset_id

``system_id`` and ``listener_id`` may be empty (absent); all other fields are
required. Scores are written with ``repr(float)`` so that write -> read is
lossless. One file carries one rating per row; multiple listener ratings of
the same sample appear as multiple rows sharing a ``sample_id``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ManifestSchemaError, ManifestValidationError

COLUMNS = ("wav_path", "sample_id", "system_id", "listener_id", "score", "dataset_id")


@dataclass(frozen=True, slots=True)
class RatedUtterance:
    """One rating of one audio sample."""

    wav_path: str
    sample_id: str
    score: float
    system_id: str | None = None
    listener_id: str | None = None
    dataset_id: str = ""


@dataclass
class DatasetSpec:
    """Describes one rated corpus and where its split manifests live.

    ``raw_dir`` points at the unprepared corpus (wav files plus rating table)
    so the preparation stage can run straight from a run config.
    """

    name: str
    raw_dir: str | None = None
    train_manifest: str | None = None
    dev_manifest: str | None = None
    test_manifest: str | None = None
    score_min: float = 1.0
    score_max: float = 5.0
    sampling_frequency: float = 16000.0
    has_listener_ids: bool = False

    def validate(self) -> None:
        if not self.name:
            raise ManifestValidationError("dataset name must be non-empty")
        if not self.score_min < self.score_max:
            raise ManifestValidationError(
                f"score_min must be < score_max, got [{self.score_min}, {self.score_max}]"
            )
        if self.sampling_frequency <= 0:
            raise ManifestValidationError("sampling_frequency must be positive")


def validate_rows(rows: Sequence[RatedUtterance], spec: DatasetSpec) -> None:
    """Check all RatedUtterance invariants; raise on the first violation."""
    spec.validate()
    seen: set[tuple[str, str | None]] = set()
    any_system = any(r.system_id for r in rows)
    for i, row in enumerate(rows):
        if not row.sample_id:
            raise ManifestValidationError(f"row {i}: empty sample_id", row_index=i)
        if not row.wav_path:
            raise ManifestValidationError(f"row {i}: empty wav_path", row_index=i)
        if not (spec.score_min <= row.score <= spec.score_max):
            raise ManifestValidationError(
                f"row {i}: score {row.score!r} outside [{spec.score_min}, {spec.score_max}]",
                row_index=i,
            )
        if any_system and not row.system_id:
            raise ManifestValidationError(
                f"row {i}: system_id missing while other rows have one", row_index=i
            )
        key = (row.sample_id, row.listener_id)
        if key in seen:
            raise ManifestValidationError(
                f"row {i}: duplicate (sample_id, listener_id) pair {key!r}", row_index=i
            )
        seen.add(key)


def read_manifest(path: str | Path, spec: DatasetSpec) -> list[RatedUtterance]:
    """Read and validate a manifest CSV; row order is preserved."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestSchemaError(f"{path}: empty file, header row required") from None
        if tuple(header) != COLUMNS:
            missing = [c for c in COLUMNS if c not in header]
            extra = [c for c in header if c not in COLUMNS]
            detail = []
            if missing:
                detail.append(f"missing column(s): {', '.join(missing)}")
            if extra:
                detail.append(f"unexpected column(s): {', '.join(extra)}")
            if not detail:
                detail.append(f"column order must be {','.join(COLUMNS)}")
            raise ManifestSchemaError(f"{path}: {'; '.join(detail)}")
        rows: list[RatedUtterance] = []
        for i, record in enumerate(reader):
            if len(record) != len(COLUMNS):
                raise ManifestSchemaError(
                    f"{path}: row {i} has {len(record)} fields, expected {len(COLUMNS)}"
                )
            wav_path, sample_id, system_id, listener_id, score_str, dataset_id = record
            try:
                score = float(score_str)
            except ValueError:
                raise ManifestValidationError(
                    f"{path}: row {i}: score {score_str!r} is not a number", row_index=i
                ) from None
            rows.append(
                RatedUtterance(
                    wav_path=wav_path,
                    sample_id=sample_id,
                    score=score,
                    system_id=system_id or None,
                    listener_id=listener_id or None,
                    dataset_id=dataset_id or spec.name,
                )
            )
    validate_rows(rows, spec)
    return rows


def _check_writable_field(value: str, column: str, row_index: int) -> str:
    # LF row endings are part of the format; the csv writer would emit a bare
    # CR unquoted, which corrupts the file on re-read. NUL is unrepresentable.
    if "\r" in value or "\x00" in value:
        raise ManifestValidationError(
            f"row {row_index}: {column} contains CR or NUL, not representable in a manifest",
            row_index=row_index,
        )
    return value


def write_manifest(rows: Iterable[RatedUtterance], path: str | Path) -> None:
    """Write rows in the canonical column order. Byte-deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COLUMNS)
        for i, row in enumerate(rows):
            writer.writerow(
                [
                    _check_writable_field(row.wav_path, "wav_path", i),
                    _check_writable_field(row.sample_id, "sample_id", i),
                    _check_writable_field(row.system_id or "", "system_id", i),
                    _check_writable_field(row.listener_id or "", "listener_id", i),
                    repr(float(row.score)),
                    _check_writable_field(row.dataset_id, "dataset_id", i),
                ]
            )


def aggregate_by_listener(rows: Sequence[RatedUtterance]) -> list[RatedUtterance]:
    """Collapse listener-wise rows to one row per sample with the mean score.

    Output order follows first appearance of each sample_id; non-score fields
    are taken from that first row and listener_id is dropped.
    """
    groups: dict[str, list[RatedUtterance]] = {}
    for row in rows:
        groups.setdefault(row.sample_id, []).append(row)
    out: list[RatedUtterance] = []
    for sample_id, members in groups.items():
        mean_score = sum(m.score for m in members) / len(members)
        out.append(replace(members[0], listener_id=None, score=mean_score))
    return out


def mean_score_by_sample(rows: Sequence[RatedUtterance]) -> dict[str, float]:
    """Map sample_id -> listener-averaged score, in first-appearance order."""
    return {r.sample_id: r.score for r in aggregate_by_listener(rows)}
