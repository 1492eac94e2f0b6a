"""Rating manifests: the CSV format that carries data through every stage.

A manifest row is one listener's rating of one audio sample. This script
builds a tiny rated set by hand, writes it, reads it back with validation,
and collapses the listener-wise rows to per-sample mean scores.
"""

import tempfile
from pathlib import Path

from mospred.manifest import (
    DatasetSpec,
    RatedUtterance,
    aggregate_by_listener,
    read_manifest,
    write_manifest,
)

work = Path(tempfile.mkdtemp(prefix="mospred_demo_"))

rows = [
    RatedUtterance("wav/a.wav", "utt_a", 4.0, system_id="tts1", listener_id="L1", dataset_id="demo"),
    RatedUtterance("wav/a.wav", "utt_a", 3.0, system_id="tts1", listener_id="L2", dataset_id="demo"),
    RatedUtterance("wav/b.wav", "utt_b", 2.0, system_id="tts2", listener_id="L1", dataset_id="demo"),
    RatedUtterance("wav/b.wav", "utt_b", 2.5, system_id="tts2", listener_id="L2", dataset_id="demo"),
]

manifest_path = work / "ratings.csv"
write_manifest(rows, manifest_path)
print(f"wrote {manifest_path}:")
print(manifest_path.read_text())

spec = DatasetSpec(name="demo", score_min=1.0, score_max=5.0, has_listener_ids=True)
loaded = read_manifest(manifest_path, spec)
assert loaded == rows
print(f"read back {len(loaded)} rows; validation passed (bounds, duplicates, system ids)")

averaged = aggregate_by_listener(loaded)
print("\nlistener-averaged scores:")
for row in averaged:
    print(f"  {row.sample_id}: {row.score:.2f}")

# validation is strict: an out-of-range score is rejected with its row index
from mospred.errors import ManifestValidationError

bad = rows + [RatedUtterance("wav/c.wav", "utt_c", 7.0, system_id="tts1", dataset_id="demo")]
write_manifest(bad, work / "bad.csv")
try:
    read_manifest(work / "bad.csv", spec)
except ManifestValidationError as err:
    print(f"\nbad manifest rejected as expected: {err}")
