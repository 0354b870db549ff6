"""Versioned JSON run-configuration schema."""
import json

import pytest

from qkdlink.config import (
    CONFIG_FORMAT_VERSION,
    ConfigError,
    config_to_dict,
    load_config,
    parse_config,
    save_config,
)


def test_empty_config_yields_defaults():
    cfg = parse_config({})
    assert cfg.detector_z.name == "sip-polimi-10um"
    assert cfg.run.seed == 0
    assert cfg.params.mu1 > cfg.params.mu2


def test_roundtrip_through_file(tmp_path):
    cfg = parse_config({"channel": {"channel_loss_db": 7.5},
                        "run": {"seed": 42, "target_nz": 5000}})
    path = tmp_path / "run.json"
    save_config(cfg, path)
    back = load_config(str(path))
    assert config_to_dict(back) == config_to_dict(cfg)
    assert back.channel.channel_loss_db == 7.5
    assert back.run.target_nz == 5000


@pytest.mark.parametrize("bad,prefix", [
    ({"bogus": 1}, "<root>.bogus"),
    ({"params": {"mu_one": 0.4}}, "params.mu_one"),
    ({"channel": {"fiber": 1}}, "channel.fiber"),
    ({"run": {"speed": 2}}, "run.speed"),
    ({"detector_z": {"preset": "id221", "typo": 1}}, "detector_z.typo"),
])
def test_unknown_keys_rejected_with_path(bad, prefix):
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert exc.value.path == prefix


@pytest.mark.parametrize("bad", [
    {"run": {"f_ec": 0.5}},
    {"run": {"sample_fraction": 1.0}},
    {"run": {"target_nz": -5}},
    {"run": {"tag_bits": 0}},
    {"run": {"adversary_fraction": 2.0}},
    {"params": {"mu1": 0.1, "mu2": 0.4}},
    {"channel": {"visibility": 1.5}},
    {"detector_z": "no-such-device"},
    {"detector_z": 7},
    {"format_version": CONFIG_FORMAT_VERSION + 1},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_detector_preset_with_field_overrides():
    cfg = parse_config({"detector_z": {"preset": "id221", "dark_rate": 500.0}})
    assert cfg.detector_z.dark_rate == 500.0
    assert cfg.detector_z.efficiency == 0.20  # inherited from the preset


def test_config_dir_env_fallback(tmp_path, monkeypatch):
    cfg = parse_config({"run": {"seed": 9}})
    save_config(cfg, tmp_path / "shared.json")
    monkeypatch.setenv("QKDLINK_CONFIG_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path / "..")
    loaded = load_config("shared.json")
    assert loaded.run.seed == 9


def test_load_reports_file_problems(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_format_version_stamped_on_output():
    assert config_to_dict(parse_config({}))["format_version"] == CONFIG_FORMAT_VERSION
