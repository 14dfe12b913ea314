import pytest
import yaml

from flowflight.config import Config, apply_override, config_hash, dump_yaml, load_config
from flowflight.errors import ConfigError


def test_defaults_validate_and_hash_is_stable():
    a, b = load_config(), load_config()
    assert config_hash(a) == config_hash(b) and len(config_hash(a)) == 16


def test_override_changes_value_and_hash():
    base = load_config()
    cfg = load_config(overrides=["train.lr=1e-3", "scenario.n_dynamic=[3, 3]"])
    assert cfg.train.lr == 1e-3 and cfg.scenario.n_dynamic == (3, 3)
    assert config_hash(cfg) != config_hash(base)


def test_seed_argument_wins():
    assert load_config(overrides=["seed=3"], seed=9).seed == 9


def test_reference_values_follow_the_simulator():
    cfg = load_config(overrides=["sim.v_ref=2.0", "lidar.d_max=8.0"])
    assert cfg.reward.v_ref == 2.0 and cfg.reward.d_max == 8.0
    with pytest.raises(ConfigError) as ei:
        load_config(overrides=["reward.v_ref=2.0"])
    assert ei.value.key == "reward.v_ref"


@pytest.mark.parametrize("override, key", [
    ("train.foo=1", "train.foo"),
    ("train.epochs=abc", "train.epochs"),
    ("train.epochs=1.5", "train.epochs"),
    ("sim.success_terminates=3", "sim.success_terminates"),
    ("lidar.d_max=-1", "lidar.d_max"),
    ("scenario.field_x=[1, 0]", "scenario.field_x"),
    ("scenario.n_dynamic=[1, 2, 3]", "scenario.n_dynamic"),
    ("eval.speed_tiers=[[2, 1]]", "eval.speed_tiers[0]"),
])
def test_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as ei:
        load_config(overrides=[override])
    assert ei.value.key == key
    assert key in str(ei.value)


def test_override_needs_equals():
    with pytest.raises(ConfigError):
        apply_override(Config(), "train.lr")


def test_yaml_round_trip(tmp_path):
    cfg = load_config(overrides=["train.epochs=7", "eval.speed_tiers=[[0, 1], [1, 3]]"])
    path = tmp_path / "c.yaml"
    dump_yaml(cfg, path)
    back = load_config(path)
    assert config_hash(back) == config_hash(cfg)
    assert back.eval.speed_tiers == ((0.0, 1.0), (1.0, 3.0))


def test_malformed_and_non_mapping_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text(yaml.safe_dump({"train": 5}))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.key == "train"


def test_desk_config_loads():
    import pathlib
    cfg = load_config(pathlib.Path(__file__).parent.parent / "configs" / "desk.yaml")
    assert cfg.train.n_envs == 16 and cfg.train.total_steps <= 2_000_000
    assert cfg.scenario.n_columns == (3, 3) and cfg.scenario.speed_range[1] <= 2.0
