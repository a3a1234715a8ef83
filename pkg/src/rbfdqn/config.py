"""Flat ``key = value`` run configuration with strict keys and total defaults."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

SEED_ENV_VAR = "RBFQ_SEED"


@dataclass
class RunConfig:
    task: str = "point_reach_2d"
    variant: str = "vanilla"
    seed: int = 0
    episodes: int = 3000
    output_dir: str = "runs/default"
    # agent
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = -1  # -1: first 40% of the episodes
    batch_size: int = 128
    target_update: str = "polyak"
    target_sync_steps: int = 500
    polyak_tau: float = 0.05
    updates_per_episode: int = 50
    clip_targets: bool = True
    # RBF Q network
    num_centroids: int = 32
    beta: float = 5.0
    hidden: str = "128,128"
    activation: str = "relu"
    rbf_norm: str = "l2"
    # replay
    buffer_capacity: int = 1_000_000
    per_alpha: float = 0.6
    per_epsilon: float = 0.01
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_anneal_steps: int = -1  # -1: total number of gradient updates in the run
    per_max_priority_init: float = 1.0
    per_is_weights: bool = True
    # hindsight relabeling
    her_strategy: str = "final_future"
    her_k: int = 4
    her_replacement: bool = True
    # environment
    env_dt: float = 0.05
    horizon: int = 200
    goal_tolerance: float = 0.01
    # logging / evaluation
    eval_episodes: int = 20
    checkpoint_every: int = 500
    log_wall_ms: bool = False

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def resolved(self) -> "RunConfig":
        """Copy with every data-dependent default replaced by its concrete value."""
        out = RunConfig(**self.__dict__)
        if out.epsilon_decay_episodes < 0:
            out.epsilon_decay_episodes = int(round(0.4 * out.episodes))
        if out.per_anneal_steps < 0:
            out.per_anneal_steps = max(1, out.episodes * out.updates_per_episode)
        return out

    def hidden_dims(self) -> tuple[int, ...]:
        text = self.hidden.strip()
        if not text:
            return ()
        try:
            return tuple(int(h) for h in text.split(","))
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated integers, got {self.hidden!r}") from None

    def to_text(self) -> str:
        lines = [f"{key} = {format_value(getattr(self, key))}" for key in self.keys()]
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, text: str):
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {kind})") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = parse_value(key, value)
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """File values, then explicit overrides, then the RBFQ_SEED environment variable."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = parse_value(key, value) if isinstance(value, str) else value
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR, "").strip():
        values["seed"] = parse_value("seed", environ[SEED_ENV_VAR])
    return RunConfig(**values)


STREAM_NAMES = ("env", "explore", "replay", "per", "her", "init", "eval")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for one named consumer; streams of different names are independent."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
