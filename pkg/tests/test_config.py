import pytest
from hypothesis import given, settings, strategies as st

from kdyn.config import RunConfig, apply_overrides, dump_config, load_config, parse_config
from kdyn.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


def test_file_values_are_typed_and_case_kept():
    cfg = parse_config("""
[data]
env = linear
T = 120
[model]
latent_dim = 16
mu_mode = learnable
[train]
lr = 0.01
normalize_rewards = yes
[plan]
horizon = 7
episodes = 2
[bench]
horizons = 10, 20
""")
    assert cfg.data.env == "linear" and cfg.data.T == 120
    assert cfg.model.latent_dim == 16 and cfg.model.mu_mode == "learnable"
    assert cfg.train.lr == 0.01 and cfg.train.normalize_rewards is True
    assert cfg.plan.horizon == 7 and cfg.episode.episodes == 2
    assert cfg.bench.horizons == (10, 20)
    assert cfg.train_config().model.latent_dim == 16


@given(st.integers(1, 500), st.floats(1e-6, 1.0), st.sampled_from(["relu", "tanh"]))
@settings(max_examples=25, deadline=None)
def test_round_trip_property(h, lr, act):
    cfg = RunConfig()
    cfg = apply_overrides(cfg, "train", {"horizon": h, "lr": lr})
    cfg = apply_overrides(cfg, "model", {"activation": act})
    assert parse_config(dump_config(cfg)) == cfg


def test_unknown_key_lists_valid_ones():
    with pytest.raises(ConfigError, match="valid keys:.*latent_dim"):
        parse_config("[model]\nlatentdim = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[optim]\nlr = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[plan]\nfoo = 1\n")


def test_bad_values_rejected():
    with pytest.raises(ConfigError, match="train.epochs"):
        parse_config("[train]\nepochs = many\n")
    with pytest.raises(ConfigError):
        parse_config("[model]\nlatent_dim = 7\n")
    with pytest.raises(ConfigError):
        parse_config("[bench]\nprecision = float32\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")
