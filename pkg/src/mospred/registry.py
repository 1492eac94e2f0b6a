"""Named, digest-verified checkpoint registry.

A registry is a JSON file of entries (name, tag, location, sha256). Locations
are paths (relative ones resolve against the registry file) or http(s) URLs;
remote checkpoints download once into a cache directory. Every load verifies
the SHA-256 of the checkpoint bytes before any deserialization.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlparse

from .errors import DataValidationError, DigestMismatchError, UsageError
from .predictor import Predictor, sha256_file


@dataclass(frozen=True, slots=True)
class RegistryEntry:
    name: str
    tag: str
    location: str
    sha256: str


def load_registry(path: str | Path) -> list[RegistryEntry]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"registry file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON ({exc})") from exc
    entries_raw = data.get("entries")
    if not isinstance(entries_raw, list):
        raise DataValidationError(f"{path}: expected a top-level 'entries' list")
    entries = []
    for i, item in enumerate(entries_raw):
        try:
            entries.append(
                RegistryEntry(
                    name=item["name"],
                    tag=item["tag"],
                    location=item["location"],
                    sha256=item["sha256"].lower(),
                )
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataValidationError(f"{path}: entry {i} malformed ({exc})") from exc
    return entries


def resolve_entry(entries: list[RegistryEntry], name: str, tag: str) -> RegistryEntry:
    for entry in entries:
        if entry.name == name and entry.tag == tag:
            return entry
    known = ", ".join(sorted({f"{e.name}:{e.tag}" for e in entries})) or "(registry empty)"
    raise UsageError(f"no registry entry {name}:{tag}; known: {known}")


def fetch_entry(
    entry: RegistryEntry, registry_dir: Path, cache_dir: Path | None = None
) -> Path:
    """Materialize the checkpoint locally and verify its digest."""
    scheme = urlparse(entry.location).scheme
    if scheme in ("http", "https"):
        cache_dir = cache_dir or registry_dir / ".cache"
        cache_dir.mkdir(parents=True, exist_ok=True)
        local = cache_dir / f"{entry.sha256}.ckpt"
        if not local.is_file():
            with urllib.request.urlopen(entry.location) as response, local.open("wb") as f:
                while True:
                    chunk = response.read(1 << 16)
                    if not chunk:
                        break
                    f.write(chunk)
    else:
        local = Path(entry.location)
        if not local.is_absolute():
            local = registry_dir / local
        if not local.is_file():
            raise DataValidationError(f"registry checkpoint missing: {local}")
    actual = sha256_file(local)
    if actual != entry.sha256:
        raise DigestMismatchError(
            f"{entry.name}:{entry.tag}: digest mismatch\n  expected {entry.sha256}\n  actual   {actual}"
        )
    return local


def registry_load(
    registry_path: str | Path,
    name: str,
    tag: str,
    cache_dir: str | Path | None = None,
    feature_dir: str | Path | None = None,
) -> Predictor:
    """Resolve name:tag, verify the digest, and load the predictor."""
    registry_path = Path(registry_path)
    entries = load_registry(registry_path)
    entry = resolve_entry(entries, name, tag)
    local = fetch_entry(
        entry, registry_path.parent, Path(cache_dir) if cache_dir else None
    )
    return Predictor.from_checkpoint(local, feature_dir=feature_dir)


def write_registry(entries: list[RegistryEntry], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "entries": [
            {"name": e.name, "tag": e.tag, "location": e.location, "sha256": e.sha256}
            for e in entries
        ]
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
