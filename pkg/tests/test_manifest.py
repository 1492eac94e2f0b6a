import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mospred.errors import ManifestSchemaError, ManifestValidationError
from mospred.manifest import (
    COLUMNS,
    DatasetSpec,
    RatedUtterance,
    aggregate_by_listener,
    read_manifest,
    write_manifest,
)

SPEC = DatasetSpec(name="unit")


def rows3():
    return [
        RatedUtterance("a.wav", "s1", 4.0, system_id="sysA", listener_id="L1", dataset_id="unit"),
        RatedUtterance("b.wav", "s2", 2.5, system_id="sysA", listener_id="L1", dataset_id="unit"),
        RatedUtterance("c.wav", "s3", 1.0, system_id="sysB", listener_id="L2", dataset_id="unit"),
    ]


def test_read_three_valid_rows(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "wav_path,sample_id,system_id,listener_id,score,dataset_id\n"
        "a.wav,s1,sysA,L1,4.0,unit\n"
        "b.wav,s2,sysA,L1,2.5,unit\n"
        "c.wav,s3,sysB,L2,1.0,unit\n"
    )
    rows = read_manifest(path, SPEC)
    assert rows == rows3()


def test_score_out_of_bounds_reports_row(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(
        rows3() + [RatedUtterance("d.wav", "s4", 7.0, system_id="sysB", dataset_id="unit")], path
    )
    with pytest.raises(ManifestValidationError) as err:
        read_manifest(path, SPEC)
    assert err.value.row_index == 3
    assert "7.0" in str(err.value)


def test_bvcc_shaped_manifest_accepted(tmp_path):
    # 187 systems x 2 samples x 8 listeners per sample
    rng = np.random.default_rng(0)
    rows = []
    for s in range(187):
        for u in range(2):
            sid = f"sys{s:03d}_utt{u}"
            for li in range(8):
                rows.append(
                    RatedUtterance(
                        wav_path=f"{sid}.wav",
                        sample_id=sid,
                        score=float(rng.integers(1, 6)),
                        system_id=f"sys{s:03d}",
                        listener_id=f"L{li}",
                        dataset_id="bvcc-shaped",
                    )
                )
    path = tmp_path / "bvcc.csv"
    write_manifest(rows, path)
    loaded = read_manifest(path, DatasetSpec(name="bvcc-shaped", has_listener_ids=True))
    assert len({r.system_id for r in loaded}) == 187
    per_sample = {}
    for r in loaded:
        per_sample.setdefault(r.sample_id, set()).add(r.listener_id)
    assert all(len(ls) == 8 for ls in per_sample.values())


def test_missing_column_named(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("wav_path,sample_id,system_id,score,dataset_id\na.wav,s1,sysA,4.0,unit\n")
    with pytest.raises(ManifestSchemaError, match="listener_id"):
        read_manifest(path, SPEC)


def test_unexpected_column_named(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(",".join(COLUMNS + ("extra",)) + "\n")
    with pytest.raises(ManifestSchemaError, match="extra"):
        read_manifest(path, SPEC)


def test_duplicate_sample_listener_pair(tmp_path):
    rows = rows3() + [rows3()[0]]
    path = tmp_path / "m.csv"
    write_manifest(rows, path)
    with pytest.raises(ManifestValidationError, match="duplicate"):
        read_manifest(path, SPEC)


def test_system_ids_all_or_none(tmp_path):
    rows = rows3() + [RatedUtterance("d.wav", "s4", 3.0, dataset_id="unit")]
    path = tmp_path / "m.csv"
    write_manifest(rows, path)
    with pytest.raises(ManifestValidationError, match="system_id"):
        read_manifest(path, SPEC)


def test_nonnumeric_score(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "wav_path,sample_id,system_id,listener_id,score,dataset_id\na.wav,s1,,,bad,unit\n"
    )
    with pytest.raises(ManifestValidationError, match="not a number"):
        read_manifest(path, SPEC)


def test_write_empty_is_header_only(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest([], path)
    assert path.read_text() == ",".join(COLUMNS) + "\n"


def test_roundtrip_is_byte_idempotent(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_manifest(rows3(), p1)
    write_manifest(read_manifest(p1, SPEC), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_commas_in_paths_roundtrip(tmp_path):
    rows = [
        RatedUtterance('dir,with,"commas"/x.wav', "s1", 3.0, dataset_id="unit"),
        RatedUtterance("plain.wav", "s2", 2.0, dataset_id="unit"),
    ]
    path = tmp_path / "m.csv"
    write_manifest(rows, path)
    assert read_manifest(path, SPEC) == rows


_field = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00\r"),
    min_size=1,
    max_size=30,
)


@settings(max_examples=60, deadline=None)
@given(
    paths=st.lists(_field, min_size=1, max_size=8),
    scores=st.lists(st.floats(min_value=1.0, max_value=5.0, allow_nan=False), min_size=8, max_size=8),
)
def test_roundtrip_property(tmp_path_factory, paths, scores):
    rows = [
        RatedUtterance(p, f"s{i}", scores[i % len(scores)], dataset_id="unit")
        for i, p in enumerate(paths)
    ]
    path = tmp_path_factory.mktemp("rt") / "m.csv"
    write_manifest(rows, path)
    assert read_manifest(path, SPEC) == rows


def test_write_rejects_carriage_return(tmp_path):
    rows = [RatedUtterance("bad\rpath.wav", "s1", 3.0, dataset_id="unit")]
    with pytest.raises(ManifestValidationError, match="CR or NUL"):
        write_manifest(rows, tmp_path / "m.csv")


def test_aggregate_trivial_cases():
    base = dict(wav_path="a.wav", sample_id="s", system_id="sysA", dataset_id="d")
    rows = [RatedUtterance(**base, listener_id=f"L{i}", score=4.0) for i in range(3)]
    agg = aggregate_by_listener(rows)
    assert len(agg) == 1 and agg[0].score == 4.0 and agg[0].listener_id is None

    rows = [
        RatedUtterance(**base, listener_id="L0", score=1.0),
        RatedUtterance(**base, listener_id="L1", score=5.0),
    ]
    assert aggregate_by_listener(rows)[0].score == 3.0


def test_aggregate_matches_groupby_oracle():
    rng = np.random.default_rng(1)
    rows = []
    for i in range(50):
        sid = f"s{rng.integers(0, 12)}"
        rows.append(
            RatedUtterance(
                wav_path=f"{sid}.wav",
                sample_id=sid,
                score=float(rng.uniform(1, 5)),
                listener_id=f"L{i}",
                dataset_id="d",
            )
        )
    agg = {r.sample_id: r.score for r in aggregate_by_listener(rows)}
    oracle: dict[str, list[float]] = {}
    for r in rows:
        oracle.setdefault(r.sample_id, []).append(r.score)
    assert set(agg) == set(oracle)
    for sid, scores in oracle.items():
        assert abs(agg[sid] - sum(scores) / len(scores)) < 1e-12
    # one output row per distinct sample, scores stay in range
    assert len(agg) == len({r.sample_id for r in rows})
    assert all(1.0 <= v <= 5.0 for v in agg.values())
