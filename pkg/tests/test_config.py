import numpy as np
import pytest

from rbfdqn.config import RunConfig, load_config, parse_config_text, stream
from rbfdqn.errors import ConfigError


def test_every_key_has_a_default_and_round_trips(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.txt"
    path.write_text(cfg.resolved().to_text())
    again = load_config(path, environ={})
    assert again == cfg.resolved()
    assert set(parse_config_text(path.read_text())) == set(RunConfig.keys())


def test_resolved_fills_data_dependent_defaults():
    cfg = RunConfig(episodes=250, updates_per_episode=10).resolved()
    assert cfg.epsilon_decay_episodes == 100
    assert cfg.per_anneal_steps == 2500
    assert RunConfig(epsilon_decay_episodes=7).resolved().epsilon_decay_episodes == 7


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="taks"):
        parse_config_text("taks = point_reach_2d")
    with pytest.raises(ConfigError, match="taks"):
        load_config(overrides={"taks": "x"}, environ={})


def test_bad_values_and_lines():
    with pytest.raises(ConfigError, match="episodes"):
        parse_config_text("episodes = many")
    with pytest.raises(ConfigError):
        parse_config_text("just words")
    with pytest.raises(ConfigError):
        RunConfig(hidden="a,b").hidden_dims()


def test_comments_booleans_and_precedence(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# run\nseed = 4  # trailing\nper_is_weights = off\nepisodes = 10\n")
    cfg = load_config(path, {"episodes": "12"}, environ={})
    assert (cfg.seed, cfg.per_is_weights, cfg.episodes) == (4, False, 12)
    cfg = load_config(path, {"seed": "5"}, environ={"RBFQ_SEED": "9"})
    assert cfg.seed == 9


def test_hidden_dims():
    assert RunConfig(hidden="64, 32").hidden_dims() == (64, 32)
    assert RunConfig(hidden="").hidden_dims() == ()


def test_named_streams_independent_and_reproducible():
    a = stream(3, "env").random(5)
    assert np.array_equal(a, stream(3, "env").random(5))
    assert not np.array_equal(a, stream(3, "her").random(5))
    assert not np.array_equal(a, stream(4, "env").random(5))
