import pytest

from mospred.errors import DataValidationError
from mospred.manifest import DatasetSpec, read_manifest
from mospred.prepare import prepare_manifests, split_counts
from mospred.synth import SynthSpec, make_synth


def test_split_counts():
    assert split_counts(10, 0.15, 0.15) == (6, 2, 2)
    assert split_counts(3, 0.15, 0.15) == (1, 1, 1)
    with pytest.raises(DataValidationError):
        split_counts(2, 0.15, 0.15)
    with pytest.raises(DataValidationError):
        split_counts(4, 0.5, 0.5)


@pytest.fixture
def corpus(tmp_path):
    spec = SynthSpec(n_systems=3, utts_per_system=4, n_listeners=2, seed=21)
    make_synth(spec, tmp_path / "raw")
    return tmp_path


def test_prepare_writes_valid_manifests(corpus):
    out = corpus / "data"
    spec = DatasetSpec(name="synth", has_listener_ids=True)
    paths = prepare_manifests(corpus / "raw", out, spec=spec)
    assert set(paths) == {"train", "dev", "test"}
    seen = {}
    for split, path in paths.items():
        rows = read_manifest(path, spec)  # validation happens here
        assert rows, split
        seen[split] = {r.sample_id for r in rows}
        # all wav paths absolute and existing
        assert all(r.wav_path.startswith("/") for r in rows)
    # splits are disjoint and cover everything
    assert not (seen["train"] & seen["dev"]) and not (seen["train"] & seen["test"])
    assert len(seen["train"] | seen["dev"] | seen["test"]) == 3 * 4
    # per system: 4 utts -> 2 train, 1 dev, 1 test
    assert len(seen["dev"]) == 3 and len(seen["test"]) == 3


def test_prepare_is_idempotent(corpus):
    spec = DatasetSpec(name="synth", has_listener_ids=True)
    p1 = prepare_manifests(corpus / "raw", corpus / "d1", spec=spec)
    p2 = prepare_manifests(corpus / "raw", corpus / "d1", spec=spec)
    for split in p1:
        assert p1[split].read_bytes() == p2[split].read_bytes()


def test_prepare_reports_missing_wavs(corpus):
    (corpus / "raw/wav/sys00_utt000.wav").unlink()
    (corpus / "raw/wav/sys01_utt002.wav").unlink()
    with pytest.raises(DataValidationError) as err:
        prepare_manifests(corpus / "raw", corpus / "data", spec=DatasetSpec(name="synth"))
    message = str(err.value)
    assert "sys00_utt000.wav" in message and "sys01_utt002.wav" in message
    assert "row" in message


def test_prepare_without_ratings(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataValidationError, match="rating table"):
        prepare_manifests(tmp_path / "empty", tmp_path / "out")
