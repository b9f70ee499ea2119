from pathlib import Path

import pytest

from adaptrecon.config import ConfigError, RunConfig, from_dict, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_defaults_fill_everything():
    cfg = from_dict({})
    assert cfg == RunConfig()
    assert cfg.trainer.accumulation_steps == 8 and cfg.model.cascades == 6
    assert sorted(cfg.centers) == ["C001", "C002", "C003", "C004", "C005"]


@pytest.mark.parametrize("name", ["toy.toml", "tiny.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.schema_version == 1
    assert "C004" in cfg.data.patients_per_center


def test_toy_config_matches_experiment_shape():
    cfg = load_config(CONFIGS / "toy.toml")
    assert cfg.model.cascades == 6 and cfg.trainer.epochs <= 10
    assert cfg.trainer.prob_universal == 0.15
    assert sum(cfg.data.patients_per_center.values()) * cfg.data.protocols_per_patient == 42


def test_nested_overrides(tmp_path):
    cfg = load_config(write(tmp_path, """
[centers.C002]
accel = 6.0
noise_sigma = 0.0
[centers.C009]
vendor_tag = "GE"
field_strength = 1.5
noise_sigma = 0.01
bias_field_strength = 0.1
coil_count = 4
[loss.protocols.cine]
w_freq = 0.5
[loss.ssim]
window = 5
[trainer.finetune]
enabled = true
T0 = 2
"""))
    assert cfg.centers["C002"].accel == 6.0 and cfg.centers["C002"].vendor_tag == "Siemens"
    assert cfg.centers["C009"].center_id == "C009"
    assert cfg.loss.per_protocol["cine"].w_freq == 0.5
    assert cfg.loss.ssim.window == 5
    assert cfg.trainer.finetune.enabled and cfg.trainer.finetune.T0 == 2


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "[model]\nwidht = 8",
    "[trainer]\npatience = 0",
    "[centers.C001]\ncoil_count = 3",
    "schema_version = 2",
    "[model\n",
])
def test_rejects_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
