"""Run configuration: TOML or JSON file plus dotted overrides."""

from __future__ import annotations

import json
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class TeacherConfig:
    method: str = "bc"
    hidden: list = field(default_factory=lambda: [256, 128])
    iters: int = 25
    episodes_per_iter: int = 8
    epochs: int = 8
    minibatch: int = 256
    heldout_episodes: int = 8
    ppo_iters: int = 200
    ppo_envs: int = 8


@dataclass
class DistillSection:
    sensor: str = "events"
    init_gain: float = 3.0
    warmup_iters: int = 60
    warmup_episodes: int = 32
    onpolicy_rounds: int = 3
    onpolicy_episodes: int = 16
    onpolicy_iters: int = 20
    onpolicy_lr_scale: float = 0.3
    onpolicy_lr_decay: bool = True
    batch_size: int = 8
    action_weight: float = 1.0
    yaw_weight: float = 0.5
    probe_episodes: int = 16
    terrains: list = field(default_factory=lambda: ["gap"])
    difficulties: list = field(default_factory=lambda: [0.1])


@dataclass
class EvalSection:
    episodes: int = 50
    batch: int = 16


@dataclass
class RunConfig:
    seed: int = 0
    n_envs: int = 32
    terrains: list = field(default_factory=lambda: ["gap", "step", "hurdle", "parkour"])
    difficulties: list = field(default_factory=lambda: [0.1])
    lightings: list = field(default_factory=lambda: ["normal", "overexposed", "underexposed", "high_speed"])
    T: int = 4
    neuron: str = "IF"
    beta: float = 0.9  # only used by LIF
    v_min: float | None = -1.0  # membrane floor, None disables
    lr: float = 0.001
    frame_rate_hz: float = 10.0
    actor: list = field(default_factory=lambda: [512, 256, 128])
    latent: int = 64
    gru_hidden: int = 64
    event_threshold: float = 0.2
    max_ticks: int = 60
    out_dir: str = "runs/default"
    student_spec: str | None = None  # optional SpikingNetSpec JSON path
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self):
        if self.neuron not in ("IF", "LIF"):
            raise ConfigError(f"neuron must be IF or LIF, got {self.neuron!r}")
        if self.teacher.method not in ("bc", "ppo"):
            raise ConfigError(f"teacher.method must be bc or ppo, got {self.teacher.method!r}")
        if self.distill.sensor not in ("events", "depth"):
            raise ConfigError(f"distill.sensor must be events or depth, got {self.distill.sensor!r}")
        if self.T < 1 or self.n_envs < 1:
            raise ConfigError("T and n_envs must be >= 1")
        if abs(self.frame_rate_hz * 0.02 * round(1 / (self.frame_rate_hz * 0.02)) - 1) > 1e-9:
            raise ConfigError("frame_rate_hz must divide the 50 Hz physics rate")
        return self

    def to_dict(self):
        return asdict(self)


def _build(cls, data, where=""):
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for k, v in data.items():
        if k not in known:
            raise ConfigError(f"unknown config key {where}{k!r}")
        sub = known[k].default_factory() if known[k].default_factory is not MISSING else None
        if is_dataclass(sub):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a table")
            v = _build(type(sub), v, f"{where}{k}.")
        kw[k] = v
    return cls(**kw)


def parse_value(text):
    """Override values are JSON when they parse as JSON, else plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    """RunConfig from a .toml/.json file (or defaults), then ``key.sub=value`` overrides."""
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            data = json.loads(raw) if str(path).endswith(".json") else tomllib.loads(raw.decode())
        except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from e
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = parse_value(val)
    return _build(RunConfig, data).validate()
