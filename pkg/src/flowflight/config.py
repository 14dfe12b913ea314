"""Layered configuration: defaults <- YAML file <- ``key.path=value`` overrides.

Every module config is a dataclass section of :class:`Config`. Unknown keys
and ill-typed values raise :class:`ConfigError` naming the key path.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .env import EnvSpec
from .errors import ConfigError
from .flow import FlowConfig
from .lidar import LidarConfig
from .nn import NetSpec
from .ppo import TrainConfig
from .reward import RewardConfig
from .world import ScenarioConfig, SimConfig

__all__ = ["Config", "EvalConfig", "load_config", "apply_override", "config_hash", "to_dict", "dump_yaml"]

# reference values that belong to the simulator / sensor, not the reward section
REWARD_SYNCED = ("v_ref", "a_ref", "d_max")


@dataclass
class EvalConfig:
    episodes: int = 50
    seed: int = 1000
    n_parallel: int = 16
    trials_per_cell: int = 20
    density_factor: float = -1.0  # < 0: scale the reference cells by arena area
    speed_tiers: tuple = ((0.5, 1.0), (1.0, 2.0), (2.0, 3.0))

    def validate(self, path="eval"):
        for name in ("episodes", "n_parallel", "trials_per_cell"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name}", "must be >= 1")
        for i, (lo, hi) in enumerate(self.speed_tiers):
            if not 0 <= lo <= hi:
                raise ConfigError(f"{path}.speed_tiers[{i}]", "need 0 <= low <= high")


@dataclass
class Config:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: NetSpec = field(default_factory=NetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for f in fields(self):
            sec = getattr(self, f.name)
            if is_dataclass(sec) and f.name != "reward":
                sec.validate(f.name)
        self.sync()
        self.reward.validate("reward")

    def sync(self):
        self.reward.v_ref = self.sim.v_ref
        self.reward.a_ref = self.sim.a_ref
        self.reward.d_max = self.lidar.d_max

    def env_spec(self):
        self.sync()
        return EnvSpec(sim=copy.deepcopy(self.sim), scenario=copy.deepcopy(self.scenario),
                       lidar=copy.deepcopy(self.lidar), flow=copy.deepcopy(self.flow),
                       reward=copy.deepcopy(self.reward), zero_flow=self.train.zero_flow)


def to_dict(cfg):
    d = asdict(cfg)
    for k in REWARD_SYNCED:
        d["reward"].pop(k, None)
    return d


def config_hash(cfg):
    blob = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dump_yaml(cfg, path=None):
    text = yaml.safe_dump(_plain(to_dict(cfg)), sort_keys=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _coerce(value, default, path):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        try:
            out = int(value) if isinstance(value, str) else value
        except ValueError:
            raise ConfigError(path, f"expected an integer, got {value!r}") from None
        if not isinstance(out, int) and not (isinstance(out, float) and out.is_integer()):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(out)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        proto = default[0] if default else None
        if len(default) and len(value) != len(default) and not isinstance(proto, tuple):
            raise ConfigError(path, f"expected {len(default)} values, got {len(value)}")
        out = []
        for i, v in enumerate(value):
            ref = default[i] if i < len(default) else proto
            out.append(_coerce(v, ref, f"{path}[{i}]") if ref is not None else v)
        return tuple(out)
    return value


def _merge(obj, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "config", "expected a mapping")
    names = {f.name for f in fields(obj)}
    for key, value in data.items():
        kp = f"{path}.{key}" if path else str(key)
        if key not in names or (path == "reward" and key in REWARD_SYNCED):
            raise ConfigError(kp, "unknown key")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            _merge(cur, value, kp)
        else:
            setattr(obj, key, _coerce(value, cur, kp))


def apply_override(cfg, text):
    """Apply one ``dotted.key=value`` override (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    node = {}
    cur = node
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    _merge(cfg, node, "")


def load_config(path=None, overrides=(), seed=None):
    """Defaults, then the YAML file, then overrides, then ``seed``; validated."""
    cfg = Config()
    if path is not None:
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(str(path), f"malformed YAML: {exc}") from None
        _merge(cfg, data, "")
    for ov in overrides:
        apply_override(cfg, ov)
    if seed is not None:
        cfg.seed = int(seed)
    cfg.validate()
    return cfg
