"""
Tests for config loading, validation, env interpolation and hashing.
"""

from pathlib import Path

import pytest
import yaml

from calora.config import (
    ExperimentConfig,
    config_hash,
    dump_config,
    interpolate_env,
    load_config,
    parse_config,
    section_hash,
)
from calora.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, data) -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.mark.parametrize("name", ["default.yaml", "smoke.yaml"])
def test_shipped_configs_load(name):
    config = load_config(CONFIGS / name)
    assert isinstance(config, ExperimentConfig)
    assert config.sensitivity.t <= config.model.timesteps


def test_defaults_for_an_empty_file(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    config = load_config(path)
    assert config == ExperimentConfig()
    assert config.lora.rank == 4
    assert config.selection.proportion == 0.1
    assert (config.world.test_per_domain, config.world.full_scale_test_per_domain) == (48, 200)
    field = type(config.world).model_fields["test_per_domain"]
    assert "desk-scale" in field.description.lower()


def test_env_interpolation(monkeypatch):
    monkeypatch.setenv("CALORA_TEST_ROOT", "/data/runs")
    monkeypatch.delenv("CALORA_UNSET", raising=False)
    doc = {"a": "${CALORA_TEST_ROOT:runs}", "b": ["${CALORA_UNSET:fallback}", "x-${CALORA_UNSET}"], "c": 3}
    assert interpolate_env(doc) == {"a": "/data/runs", "b": ["fallback", "x-"], "c": 3}
    assert parse_config({"run_root": "${CALORA_TEST_ROOT:runs}"}).run_root == "/data/runs"


def test_errors_name_the_field(tmp_path):
    """Validation failures carry the dotted path of the bad field."""
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, {"lora": {"rank": 0}}))
    assert exc.value.field == "lora.rank"
    assert exc.value.exit_code == 1


@pytest.mark.parametrize("data", [
    {"lora": {"rnak": 4}},
    {"colour": "red"},
    {"world": {"source_style": "sunset"}},
    {"model": {"width": 30, "heads": 4}},
    {"sensitivity": {"t": 500}},
    {"eval": {"segmenter_batch": 5}},
    {"generation": {"conditions": []}},
])
def test_invalid_documents_are_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("lora: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    listed = tmp_path / "list.yaml"
    listed.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_sections_are_frozen():
    config = ExperimentConfig()
    with pytest.raises(Exception):
        config.lora.rank = 8


def test_config_hash_tracks_edits_but_not_run_root():
    base = ExperimentConfig()
    assert config_hash(base) == config_hash(ExperimentConfig())
    assert config_hash(base) != config_hash(parse_config({"lora": {"rank": 2}}))
    assert config_hash(base) == config_hash(parse_config({"run_root": "/elsewhere"}))
    assert len(config_hash(base)) == 16


def test_section_hash_depends_only_on_its_sections():
    a = ExperimentConfig()
    b = parse_config({"lora": {"rank": 2}})
    assert section_hash(a, ["model", "pretrain"], {"world": "w"}) == section_hash(b, ["model", "pretrain"], {"world": "w"})
    assert section_hash(a, ["lora"], {}) != section_hash(b, ["lora"], {})
    assert section_hash(a, ["model"], {"world": "w1"}) != section_hash(a, ["model"], {"world": "w2"})


def test_dump_roundtrip(tmp_path):
    config = parse_config({"name": "x", "selection": {"proportion": 0.03}})
    path = tmp_path / "dumped.yaml"
    path.write_text(dump_config(config))
    assert load_config(path) == config
