import pytest

from hopmix.config import SCHEMA, ConfigError, config_for_model, load_config, parse_text
from hopmix.mixer import MixerConfig


def test_parse_text_comments_and_blank_lines():
    assert parse_text("# head\n\na = 1  # tail\n b.c=x y \n") == {"a": "1", "b.c": "x y"}
    with pytest.raises(ConfigError):
        parse_text("no equals sign")


def test_defaults_and_preset_dims():
    cfg = load_config()
    mc = cfg.model_config()
    assert mc == MixerConfig.preset("micro", seed=0)
    assert cfg.resolved()["model.hidden_dim"] == 64


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\nmodel.n_iter = 5\ntrain.record_time = yes\n")
    cfg = load_config(p, ["model.n_iter=1", "hopfield.sizes = 4,5,6"])
    assert cfg["seed"] == 3 and cfg["model.n_iter"] == 1
    assert cfg["train.record_time"] is True
    assert cfg["hopfield.sizes"] == (4, 5, 6)
    assert cfg.model_config().n_iter == 1


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["model.nitter=2"])
    assert "model.n_iter" in str(info.value)


@pytest.mark.parametrize("item", ["seed=abc", "train.record_time=maybe", "noequals", "model.preset=huge",
                                  "model.patch_size=5"])
def test_bad_values(item):
    with pytest.raises(ConfigError):
        load_config(overrides=[item])


def test_echo_round_trips():
    cfg = load_config(overrides=["model.h_r=0.5", "hopfield.taus=1.0,0.001", "train.lr=3e-4"])
    again = load_config(text=cfg.echo())
    assert again.resolved() == cfg.resolved()
    assert again.echo() == cfg.echo()
    lines = cfg.echo().splitlines()
    assert lines == sorted(lines) and len(lines) == len(SCHEMA)


def test_config_for_model_reproduces_model():
    mc = MixerConfig(image_size=8, patch_size=2, channels_in=3, hidden_dim=5, depth=1, token_dim=3,
                     channel_dim=4, token_mixer="vanilla", h_r=1.5, n_iter=4, coeff=0.7, n_power=3,
                     specnorm_mode="none", num_classes=7, dropout=0.1, seed=9)
    assert config_for_model(mc).model_config() == mc
    assert load_config(text=config_for_model(mc).echo()).model_config() == mc
