import pytest
import yaml

from mospred.config import load_run_config, run_config_from_dict
from mospred.errors import ConfigError


def minimal_dict(**overrides):
    data = {
        "name": "unit",
        "out_dir": "out",
        "datasets": [
            {
                "name": "synth",
                "train_manifest": "train.csv",
                "dev_manifest": "dev.csv",
                "test_manifest": "test.csv",
                "has_listener_ids": True,
            }
        ],
    }
    data.update(overrides)
    return data


def test_defaults_fill_in(tmp_path):
    cfg = run_config_from_dict(minimal_dict(), base_dir=tmp_path)
    assert cfg.train.batch_size == 16
    assert cfg.train.lr == 0.001
    assert cfg.train.momentum == 0.9
    assert cfg.train.max_steps == 100000
    assert cfg.train.patience_steps == 2000
    assert cfg.train.keep_best == 5
    assert cfg.encoder.sample_rate == 16000
    assert cfg.encoder.n_mels == 80
    # clip range resolved from the dataset score range
    assert (cfg.head.clip_min, cfg.head.clip_max) == (1.0, 5.0)
    # relative paths resolved against the config location
    assert cfg.datasets[0].train_manifest == str(tmp_path / "train.csv")
    assert cfg.out_dir == str(tmp_path / "out")


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigError, match="unknown config key: typo"):
        run_config_from_dict(minimal_dict(typo=1))
    with pytest.raises(ConfigError, match="unknown config key: train.lr_rate"):
        run_config_from_dict(minimal_dict(train={"lr_rate": 0.1}))
    with pytest.raises(ConfigError, match="unknown config key: datasets\\[0\\].score_mid"):
        data = minimal_dict()
        data["datasets"][0]["score_mid"] = 3
        run_config_from_dict(data)
    with pytest.raises(ConfigError, match="unknown config key: head.depth"):
        run_config_from_dict(minimal_dict(head={"depth": 3}))


def test_component_validation_propagates():
    with pytest.raises(ConfigError):
        run_config_from_dict(minimal_dict(train={"selection_metric": "nope"}))
    with pytest.raises(ConfigError):
        run_config_from_dict(minimal_dict(encoder={"kind": "wavlm"}))
    with pytest.raises(ConfigError, match="at least one dataset"):
        run_config_from_dict({"name": "x", "out_dir": "y"})


def test_yaml_loading(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(minimal_dict()))
    cfg = load_run_config(path)
    assert cfg.name == "unit"
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("{unbalanced")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_run_config(bad)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        load_run_config(empty)


def test_score_range_union():
    data = minimal_dict()
    data["datasets"].append(
        {"name": "wide", "score_min": 0.0, "score_max": 9.0}
    )
    cfg = run_config_from_dict(data)
    assert cfg.score_range() == (0.0, 9.0)
    assert (cfg.head.clip_min, cfg.head.clip_max) == (0.0, 9.0)


def test_duplicate_dataset_names():
    data = minimal_dict()
    data["datasets"].append({"name": "synth"})
    with pytest.raises(ConfigError, match="unique"):
        run_config_from_dict(data)
