"""
Tests for run configuration loading, overrides, validation and typed views.
"""

import json

import pytest

from moesearch.config import (
    DEFAULT_MENU,
    RunConfig,
    create_default_settings,
    load_run_config,
    parse_override,
)
from moesearch.core.errors import ConfigError
from moesearch.search.engine import OptimizerSettings

from .conftest import MODEL_DIM, TINY_MENU, tiny_settings


def test_defaults_validate():
    config = RunConfig().validate()
    assert config.target_ratio == 0.5
    assert config.get_value("search_space.menu") == DEFAULT_MENU
    assert config.get_value("phase1.temperature_anneal_rate") == 0.6


def test_defaults_are_fresh_copies():
    settings = create_default_settings()
    settings["search_space"]["menu"].append("ffl:d=4")
    assert create_default_settings()["search_space"]["menu"] == DEFAULT_MENU


class TestOverrides:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("phase1.epochs=3", ("phase1.epochs", 3)),
            ("target_ratio=0.7", ("target_ratio", 0.7)),
            ("run.output_dir=runs/x", ("run.output_dir", "runs/x")),
            ('search_space.menu=["skip"]', ("search_space.menu", ["skip"])),
            ("corpus.path=null", ("corpus.path", None)),
        ],
    )
    def test_parse_override(self, text, expected):
        assert parse_override(text) == expected

    @pytest.mark.parametrize("text", ["phase1.epochs", "=3"])
    def test_malformed_override(self, text):
        with pytest.raises(ConfigError, match="section.field=value"):
            parse_override(text)

    def test_apply_overrides_creates_sections(self):
        config = RunConfig().apply_overrides(["phase2.epochs=2", "extra.flag=true"])
        assert config.get_value("phase2.epochs") == 2
        assert config.get_value("extra.flag") is True
        assert config.get_value("missing.path", "fallback") == "fallback"

    def test_copy_is_independent(self):
        config = RunConfig()
        clone = config.copy()
        clone.set_value("phase1.epochs", 99)
        assert config.get_value("phase1.epochs") == 10


class TestValidation:
    @pytest.mark.parametrize(
        "override, field",
        [
            ("target_ratio=0", "target_ratio"),
            ("target_ratio=1.5", "target_ratio"),
            ('run.seed="zero"', "run.seed"),
            ("corpus.split_ratios=[0.5,0.5]", "corpus.split_ratios"),
            ("corpus.batch_size=0", "corpus.batch_size"),
            ("model.n_layers=true", "model.n_layers"),
            ("profiling.repetitions=9", "profiling.repetitions"),
            ("profiling.warmup=2", "profiling.warmup"),
            ('profiling.precision="fp16"', "profiling.precision"),
            ("phase1.arch_data_fraction=0", "phase1.arch_data_fraction"),
            ("phase1.arch_warmup_fraction=1", "phase1.arch_warmup_fraction"),
            ("phase1.temperature_anneal_rate=1.2", "phase1.temperature_anneal_rate"),
            ("phase2.balance_coefficient=-1", "phase2.balance_coefficient"),
            ("phase2.moe_dropout=1", "phase2.moe_dropout"),
            ('search_space.menu=["skip","mha:h=3"]', "search_space.menu[1]"),
            ('search_space.menu=["skip","skip"]', "search_space.menu"),
            ("search_space.menu=[]", "search_space.menu"),
            ('backbone.slots=["ffl:d=0"]', "backbone.slots[0]"),
            ("model.heads=3", "model.heads"),
        ],
    )
    def test_error_names_the_field(self, override, field):
        config = RunConfig().apply_overrides([override])
        with pytest.raises(ConfigError) as excinfo:
            config.validate()
        assert excinfo.value.field == field
        assert f"'{field}'" in str(excinfo.value)

    def test_missing_corpus_file(self, tmp_path):
        config = RunConfig({"corpus": {"path": str(tmp_path / "absent.txt")}})
        with pytest.raises(ConfigError, match="corpus.path"):
            config.validate()

    def test_config_error_is_a_value_error(self):
        assert issubclass(ConfigError, ValueError)


class TestFiles:
    def test_json_round_trip(self, tmp_path):
        config = RunConfig(tiny_settings(tmp_path / "run"))
        path = config.save(tmp_path / "config.json")
        loaded = RunConfig(settings_path=str(path))
        assert loaded.settings == config.settings
        assert loaded.source == path

    def test_partial_file_merges_with_defaults(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"phase1": {"epochs": 4}}))
        config = load_run_config(path, ["phase2.epochs=1"])
        assert config.get_value("phase1.epochs") == 4
        assert config.get_value("phase1.initial_temperature") == 5.0
        assert config.get_value("phase2.epochs") == 1

    def test_yaml_round_trip(self, tmp_path):
        pytest.importorskip("yaml")
        config = RunConfig(tiny_settings(tmp_path / "run"))
        path = config.save(tmp_path / "config.yaml")
        assert RunConfig(settings_path=str(path)).settings == config.settings

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig().load(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError, match="cannot parse"):
            RunConfig().load(bad)
        listing = tmp_path / "list.json"
        listing.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="mapping"):
            RunConfig().load(listing)
        other = tmp_path / "config.toml"
        other.write_text("")
        with pytest.raises(ConfigError, match="unsupported format"):
            RunConfig().load(other)


class TestTypedViews:
    def test_backbone_and_space(self, tmp_path):
        config = RunConfig(tiny_settings(tmp_path / "run"))
        assert config.backbone().keys == ["mha:h=2", "ffl:d=16"]
        space = config.search_space()
        assert len(space) == 2 and [o.key for o in space.menus[0]] == TINY_MENU
        assert config.output_dir == tmp_path / "run"
        assert config.progress_bar is False

    def test_explicit_backbone_slots(self):
        config = RunConfig({"backbone": {"slots": ["mha:h=4", "ffl:d=64", "mha:h=2"]}})
        assert config.validate().backbone().keys == ["mha:h=4", "ffl:d=64", "mha:h=2"]

    def test_profiling_context(self, tmp_path):
        context = RunConfig(tiny_settings(tmp_path)).profiling_context()
        assert (context.batch_size, context.seq_len, context.model_dim) == (2, 8, MODEL_DIM)

    def test_phase_configs(self, tmp_path):
        config = RunConfig(tiny_settings(tmp_path))
        phase1 = config.phase1_config()
        assert phase1.epochs == 2 and phase1.target_ratio == 0.9 and phase1.seed == 0
        assert phase1.arch_optimizer == OptimizerSettings("adam", 0.01)
        phase2 = config.phase2_config()
        assert phase2.epochs == 1 and phase2.balance_coefficient == 1.0

    def test_unknown_phase_field(self):
        config = RunConfig().apply_overrides(["phase1.lerning_rate=0.1"])
        with pytest.raises(ConfigError) as excinfo:
            config.phase1_config()
        assert excinfo.value.field == "phase1"
