"""Data preparation: turn a raw rating table + WAV directory into validated
train/dev/test manifests.

The raw directory must hold a ``ratings.csv`` in the canonical manifest format
(wav paths relative to the directory) plus the referenced WAV files. Splitting
is per system (per sample when no system ids): samples are sorted by id and
sliced dev / test / train, so reruns are byte-identical.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .errors import DataValidationError
from .manifest import DatasetSpec, RatedUtterance, read_manifest, write_manifest
from .synth import RATINGS_FILENAME


def split_counts(n: int, dev_frac: float, test_frac: float) -> tuple[int, int, int]:
    """(train, dev, test) sizes; dev/test get at least one sample when n >= 3."""
    if n < 3:
        raise DataValidationError(f"need at least 3 samples per group to split, got {n}")
    n_dev = max(1, round(n * dev_frac))
    n_test = max(1, round(n * test_frac))
    n_train = n - n_dev - n_test
    if n_train < 1:
        raise DataValidationError(
            f"split fractions leave no training data for a group of {n} samples"
        )
    return n_train, n_dev, n_test


def prepare_manifests(
    data_dir: str | Path,
    out_dir: str | Path | None = None,
    spec: DatasetSpec | None = None,
    dev_frac: float = 0.15,
    test_frac: float = 0.15,
    ratings_filename: str = RATINGS_FILENAME,
    out_paths: dict[str, Path] | None = None,
) -> dict[str, Path]:
    """Validate the raw corpus and write train/dev/test manifests.

    Outputs land at ``out_dir/{train,dev,test}.csv`` unless explicit
    ``out_paths`` are given. Manifest wav paths are absolutized so the outputs
    are usable from any working directory. Returns the written manifest paths
    by split name.
    """
    data_dir = Path(data_dir)
    if out_paths is None:
        if out_dir is None:
            raise ValueError("either out_dir or out_paths is required")
        out_dir = Path(out_dir)
        out_paths = {split: out_dir / f"{split}.csv" for split in ("train", "dev", "test")}
    if set(out_paths) != {"train", "dev", "test"}:
        raise ValueError("out_paths must name exactly train, dev, and test")
    if spec is None:
        spec = DatasetSpec(name=data_dir.name or "dataset")
    ratings_path = data_dir / ratings_filename
    if not ratings_path.is_file():
        raise DataValidationError(f"rating table not found: {ratings_path}")
    rows = read_manifest(ratings_path, spec)

    missing = [
        (i, row.wav_path)
        for i, row in enumerate(rows)
        if not (data_dir / row.wav_path).is_file()
    ]
    if missing:
        shown = "\n".join(f"  row {i}: {p}" for i, p in missing[:20])
        more = "" if len(missing) <= 20 else f"\n  (+{len(missing) - 20} more)"
        raise DataValidationError(f"missing wav files referenced by the rating table:\n{shown}{more}")

    rows = [replace(r, wav_path=str((data_dir / r.wav_path).resolve())) for r in rows]

    by_sample: dict[str, list[RatedUtterance]] = {}
    for row in rows:
        by_sample.setdefault(row.sample_id, []).append(row)
    groups: dict[str, list[str]] = {}
    for sample_id, members in by_sample.items():
        groups.setdefault(members[0].system_id or "", []).append(sample_id)

    split_ids: dict[str, set[str]] = {"train": set(), "dev": set(), "test": set()}
    for system_id in sorted(groups):
        sample_ids = sorted(groups[system_id])
        n_train, n_dev, n_test = split_counts(len(sample_ids), dev_frac, test_frac)
        split_ids["dev"].update(sample_ids[:n_dev])
        split_ids["test"].update(sample_ids[n_dev : n_dev + n_test])
        split_ids["train"].update(sample_ids[n_dev + n_test :])

    for split in ("train", "dev", "test"):
        split_rows = [r for r in rows if r.sample_id in split_ids[split]]
        write_manifest(split_rows, out_paths[split])
    return dict(out_paths)
