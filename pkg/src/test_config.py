"""
Tests for the key = value configuration format and its precedence rules.
"""

import pytest

from config import ExperimentConfig, dump_config, load_config, parse_config
from errors import ConfigurationError


def test_dump_then_parse_is_identity():
    config = ExperimentConfig()
    config.model.input_size = (32, 16)
    config.loss.beta = 0.75
    config.hd95.one_empty_penalty = 12.5
    config.train.augment = False
    assert parse_config(dump_config(config)) == config


def test_defaults_dump_fully_qualified():
    text = dump_config(ExperimentConfig())
    assert "model.base_width = 8\n" in text
    assert "loss.beta = 0.0\n" in text
    assert "hd95.one_empty_penalty = none\n" in text
    assert "model.input_size = 48,48\n" in text


def test_unqualified_keys_resolve_to_their_section():
    config = parse_config("base_width = 16\nbeta = 2  # comment\n\n# full line comment\n")
    assert config.model.base_width == 16
    assert config.loss.beta == 2.0


def test_ambiguous_and_unknown_keys():
    with pytest.raises(ConfigurationError, match="Ambiguous"):
        parse_config("seed = 3")
    assert parse_config("augment.seed = 3").augment.seed == 3
    with pytest.raises(ConfigurationError, match="Unknown"):
        parse_config("model.depth = 3")
    with pytest.raises(ConfigurationError, match="Unknown"):
        parse_config("learning_rate = 3")


def test_malformed_lines_and_values():
    with pytest.raises(ConfigurationError):
        parse_config("model.stages 3")
    with pytest.raises(ConfigurationError):
        parse_config("model.stages = three")
    with pytest.raises(ConfigurationError):
        parse_config("train.augment = maybe")
    with pytest.raises(ConfigurationError):
        parse_config("model.input_size = 32")
    with pytest.raises(ConfigurationError):
        parse_config("loss.beta = nan")


def test_precedence_defaults_file_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 7\ntrain.lr = 0.01\n", encoding="utf-8")
    config = load_config(path, ["train.lr=0.5"])
    assert config.train.epochs == 7
    assert config.train.lr == 0.5
    assert config.train.batch_size == ExperimentConfig().train.batch_size


def test_missing_configuration_file(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.cfg")


def test_validation():
    with pytest.raises(ConfigurationError, match="batch_size"):
        load_config(None, ["loss.beta=1", "train.batch_size=1"])
    assert load_config(None, ["loss.beta=0", "train.batch_size=1"]).train.batch_size == 1
    with pytest.raises(ConfigurationError):
        load_config(None, ["model.input_size=36,36", "model.stages=4"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["focal.alpha=1.5"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["train.modality_dropout_p=2"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["hd95.spacing=1,0,1"])


def test_scaled_augmentation():
    augment = ExperimentConfig().augment.scaled_to(48)
    assert augment.final_size == 48
    assert augment.crop_size == 45
    assert ExperimentConfig().augment.scaled_to(240).crop_size == 224
