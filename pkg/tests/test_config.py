"""Flat key-value configuration files."""

import pytest

from lanegap import config
from lanegap.idm import IdmParams
from lanegap.labeling import LabelParams
from lanegap.train import TrainConfig


class TestParseValue:

    @pytest.mark.parametrize("text,expect", [
        ("true", True),
        ("False", False),
        ("42", 42),
        ("-3", -3),
        ("0.5", 0.5),
        ("1e-3", 1e-3),
        ("action", "action"),
        ("left, right", ("left", "right")),
        ("0.1, 1, 10", (0.1, 1, 10)),
        (" 7 ", 7),
    ])
    def test_inference(self, text, expect):
        assert config.parse_value(text) == expect

    def test_trailing_comma_tuple(self):
        assert config.parse_value("5,") == (5,)


class TestRoundTrip:

    def test_defaults_round_trip(self):
        text = config.dumps(config.DEFAULTS)
        again = config.loads(text)
        assert again == config.DEFAULTS

    def test_comments_and_blanks_ignored(self):
        text = "# heading\n\nseed = 3  # trailing note\n"
        assert config.loads(text) == {"seed": 3}

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="line 2"):
            config.loads("seed = 1\nnot a pair\n")

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "run.cfg"
        cfg = {"seed": 9, "label.sides": ("left",),
               "train.learning_rate": 2.5e-4}
        config.save_config(path, cfg)
        assert config.load_config(path) == cfg

    def test_float_values_round_trip_exactly(self, tmp_path):
        path = tmp_path / "run.cfg"
        cfg = {"train.learning_rate": 0.1 + 0.2}
        config.save_config(path, cfg)
        assert config.load_config(path)["train.learning_rate"] == 0.1 + 0.2


class TestResolve:

    def test_defaults_when_empty(self):
        assert config.resolve() == config.DEFAULTS

    def test_layering_order(self):
        cfg = config.resolve({"seed": 5}, {"seed": 7})
        assert cfg["seed"] == 7

    def test_file_layer_applies(self):
        cfg = config.resolve({"train.epochs": 3})
        assert cfg["train.epochs"] == 3
        assert cfg["train.hidden_dim"] == config.DEFAULTS["train.hidden_dim"]

    @pytest.mark.parametrize("layer", [{"typo.key": 1}, {"train.epoch": 2}])
    def test_unknown_keys_rejected(self, layer):
        with pytest.raises(KeyError):
            config.resolve(layer)


class TestAsTuple:

    @pytest.mark.parametrize("value,expect", [
        (("a", "b"), ("a", "b")),
        (["a"], ("a",)),
        ("", ()),
        (None, ()),
        ("left", ("left",)),
        (5, (5,)),
    ])
    def test_normalization(self, value, expect):
        assert config.as_tuple(value) == expect


class TestExtraction:

    def test_label_params(self):
        cfg = config.resolve({"label.horizon_s": 4.0})
        params = config.label_params(cfg)
        assert isinstance(params, LabelParams)
        assert params.horizon_s == 4.0
        assert params.lateral_speed_min == 0.213

    def test_idm_params(self):
        cfg = config.resolve({"idm.max_accel": 2.0})
        params = config.idm_params(cfg)
        assert isinstance(params, IdmParams)
        assert params.max_accel == 2.0
        assert params.desired_speed == 30.0

    def test_train_config_takes_top_level_seed(self):
        cfg = config.resolve({"seed": 11, "train.epochs": 2})
        tc = config.train_config(cfg)
        assert isinstance(tc, TrainConfig)
        assert tc.seed == 11
        assert tc.epochs == 2

    def test_train_config_seed_override(self):
        cfg = config.resolve({"seed": 11})
        assert config.train_config(cfg, seed=3).seed == 3

    def test_extraction_ignores_other_namespaces(self):
        cfg = config.resolve({"train.epochs": 2, "idm.min_gap": 3.0})
        params = config.label_params(cfg)
        assert params == LabelParams()
