"""Tests for key = value config files."""

import pytest

from ffdconv.config import FeatureParams, ModelConfig, TrainConfig
from ffdconv.configfile import (
    ConfigSet,
    apply_overrides,
    dump_record,
    evaluate_value,
    load_config_set,
    parse_config_text,
    parse_record,
)
from ffdconv.exceptions import ConfigError, DataError

from .fixtures.builders import TINY_MODEL, TINY_SYNTH


class TestEvaluateValue:
    """Tests for safe value evaluation."""

    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            ("3", 3),
            ("16000 / 2", 8000.0),
            ("[16, 32]", [16, 32]),
            ("(0.5,) * 2", (0.5, 0.5)),
            ("'glu'", "glu"),
            ("on", True),
            ("false", False),
        ],
    )
    def test_literals_and_arithmetic(self, text, expected):
        """Test literals, lists, tuples, arithmetic and boolean words."""
        assert evaluate_value(text) == expected

    def test_function_calls_are_refused(self):
        """Test arbitrary calls cannot run."""
        with pytest.raises(ConfigError):
            evaluate_value("open('/etc/passwd')")

    def test_unknown_names(self):
        """Test undefined names are reported with the key."""
        with pytest.raises(ConfigError, match="'model.kinds'"):
            evaluate_value("ffd", key="model.kinds")


class TestParseConfigText:
    """Tests for parsing whole files."""

    def test_sections_and_comments(self):
        """Test keys are grouped by section and comments are ignored."""
        parsed = parse_config_text("# header\nmodel.window = 5  # wider\ntrain.epochs = 3\n")

        assert parsed == {"model": {"window": 5}, "train": {"epochs": 3}}

    def test_bare_key_uses_default_section(self):
        """Test an unprefixed key lands in the default section."""
        assert parse_config_text("epochs = 2", default_section="train") == {
            "train": {"epochs": 2}
        }

    def test_bare_key_without_default(self):
        """Test an unprefixed key without a default section is an error."""
        with pytest.raises(ConfigError, match="needs a section prefix"):
            parse_config_text("epochs = 2")

    def test_unknown_section(self):
        """Test unknown sections report the line number."""
        with pytest.raises(ConfigError, match="cfg:2: unknown section 'optim'"):
            parse_config_text("train.epochs = 1\noptim.lr = 0.1\n", source="cfg")

    def test_missing_equals(self):
        """Test a line without '=' is rejected."""
        with pytest.raises(ConfigError) as exc:
            parse_config_text("model.window 5\n")
        assert exc.value.details["line"] == 1


class TestApplyOverrides:
    """Tests for applying values onto frozen records."""

    def test_lists_become_tuples(self):
        """Test list values are stored as tuples."""
        model = apply_overrides(ModelConfig(), {"channels": [4, 4], "kinds": ["static", "ftd"],
                                                "time_pool": [1, 1], "freq_pool": [2, 2]})

        assert model.channels == (4, 4)
        assert model.kinds == ("static", "ftd")

    def test_integral_float_for_int_field(self):
        """Test 4.0 is accepted for an integer field."""
        assert apply_overrides(TrainConfig(), {"epochs": 4.0}).epochs == 4

    def test_type_mismatch(self):
        """Test a string for a numeric field is refused."""
        with pytest.raises(ConfigError, match="expected a number"):
            apply_overrides(FeatureParams(), {"fmax": "high"})

    def test_unknown_key(self):
        """Test unknown fields are refused."""
        with pytest.raises(ConfigError, match="unknown key 'depth'"):
            apply_overrides(ModelConfig(), {"depth": 3})

    def test_record_validation_runs(self):
        """Test invalid resulting records raise ConfigError with the source."""
        with pytest.raises(ConfigError, match="<flags>"):
            apply_overrides(TrainConfig(), {"median_length": 4})

    def test_empty_overrides_return_record(self):
        """Test no overrides return the same record."""
        config = TrainConfig()

        assert apply_overrides(config, {}) is config


class TestLoadConfigSet:
    """Tests for loading files onto defaults."""

    def test_tiny_file(self, tiny_config_file):
        """Test the tiny config file builds the tiny model and synth spec."""
        configs = load_config_set(tiny_config_file)

        assert configs.synth == TINY_SYNTH
        assert configs.model.channels == TINY_MODEL.channels
        assert configs.model.kinds == TINY_MODEL.kinds
        assert configs.train.n_train == 4

    def test_file_applies_on_top_of_base(self, tmp_path):
        """Test a file overrides only the keys it names."""
        path = tmp_path / "c.conf"
        path.write_text("train.epochs = 7\n")
        base = ConfigSet(train=TrainConfig(batch_size=3))

        configs = load_config_set(path, base)

        assert (configs.train.epochs, configs.train.batch_size) == (7, 3)

    def test_no_path(self):
        """Test no file returns the defaults."""
        assert load_config_set(None) == ConfigSet()

    def test_missing_file(self, tmp_path):
        """Test a missing file is an I/O error, not a config error."""
        with pytest.raises(DataError):
            load_config_set(tmp_path / "absent.conf")


class TestRecordText:
    """Tests for dump_record / parse_record."""

    def test_model_config_survives(self):
        """Test a dumped model config parses back equal."""
        assert parse_record(dump_record(TINY_MODEL), ModelConfig) == TINY_MODEL

    def test_sectioned_dump(self):
        """Test a section prefix is applied to every key."""
        text = dump_record(TrainConfig(), "train")

        assert all(line.startswith("train.") for line in text.splitlines())
        assert "train.epochs = 30" in text.splitlines()
