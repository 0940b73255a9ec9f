"""Training configuration and its flat ``key = value`` file format.

Grammar: one ``key = value`` per line, ``#`` starts a comment, UTF-8, no
sections. Keys are exactly the :class:`TrainConfig` field names; unknown keys
are errors. Booleans are ``true``/``false``, integer lists are comma
separated, ``inf`` disables a KL bound.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration key or value."""


MODES = ("oracle", "bandit", "rl")
TASKS = ("sphere", "rosenbrock", "rosenbrock_paper", "pointmass")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "oracle"
    task: str = "sphere"
    dim: int = 10
    transform: str = "exponential"
    rank_temp: float = 10.0
    decoupled: bool = True
    epsilon: float = 0.1
    eps_mean: float = 5.0
    eps_cov: float = 0.001
    coupled_eps: float = 5.0
    num_states: int = 100
    num_actions: int = 10
    policy_hidden: tuple[int, ...] = (50, 50)
    critic_hidden: tuple[int, ...] = (64, 64)
    activation: str = "elu"
    layer_norm_first: bool = False
    layer_norm_tanh: bool = False
    init_std: float = 0.3
    init_mean: float = 0.0
    policy_lr: float = 3e-4
    policy_lr_final: float = 0.0  # 0 keeps policy_lr fixed; else geometric anneal to this
    critic_lr: float = 3e-4
    dual_lr: float = 0.01
    dual_steps: int = 10
    eta_init: float = 1.0
    eta_min: float = 1e-8
    multiplier_lr: float = 0.001
    alpha_init: float = 1.0
    gamma: float = 0.99
    target_period: int = 250
    replay_capacity: int = 100000
    warmup_steps: int = 1000
    bootstrap_samples: int = 1
    evaluator: str = "td0"
    horizon: int = 50
    eval_episodes: int = 5
    eval_states: int = 100
    rate_mean: float = 0.5
    rate_cov: float = 0.5
    full_cov: bool = False
    iterations: int = 5000
    seed: int = 0
    metrics_period: int = 10
    checkpoint_period: int = 1000
    record_wall_time: bool = False

    def __post_init__(self):
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}")
        if self.task not in TASKS:
            errs.append(f"task must be one of {TASKS}")
        if self.transform not in ("exponential", "ranking", "identity"):
            errs.append("transform must be exponential, ranking or identity")
        if self.evaluator not in ("td0", "exact"):
            errs.append("evaluator must be td0 or exact")
        if self.mode == "rl" and self.evaluator == "exact":
            errs.append("evaluator=exact is only available for tabular checks, not rl mode")
        if self.mode == "rl" and self.task != "pointmass":
            errs.append("rl mode needs task = pointmass")
        if self.mode != "rl" and self.task == "pointmass":
            errs.append("task = pointmass needs mode = rl")
        for name in ("epsilon", "eps_mean", "eps_cov", "coupled_eps", "rank_temp", "init_std",
                     "policy_lr", "critic_lr", "dual_lr", "eta_init", "eta_min", "multiplier_lr",
                     "alpha_init"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be positive")
        for name in ("dim", "num_states", "num_actions", "dual_steps", "target_period",
                     "replay_capacity", "bootstrap_samples", "horizon", "eval_episodes",
                     "eval_states", "metrics_period", "checkpoint_period"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.iterations < 0 or self.warmup_steps < 0:
            errs.append("iterations and warmup_steps must be >= 0")
        if self.num_states * self.num_actions < 2:
            errs.append("num_states * num_actions must be >= 2")
        if not 0.0 <= self.gamma < 1.0:
            errs.append("gamma must lie in [0, 1)")
        if not (0 <= self.rate_mean <= 1 and 0 <= self.rate_cov <= 1):
            errs.append("rate_mean and rate_cov must lie in [0, 1]")
        if any(h < 1 for h in self.policy_hidden + self.critic_hidden):
            errs.append("hidden widths must be positive")
        if self.policy_lr_final < 0:
            errs.append("policy_lr_final must be >= 0")
        if self.eta_init < self.eta_min:
            errs.append("eta_init must be >= eta_min")
        if errs:
            raise ConfigError("; ".join(errs))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _parse_value(name: str, text: str):
    kind = _FIELDS[name].type
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("tuple"):
            return tuple(int(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_pairs(pairs) -> dict:
    """``["key = value", ...]`` or ``key=value`` strings to typed values."""
    out = {}
    for raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def parse_config(text: str, overrides=(), base: TrainConfig | None = None) -> TrainConfig:
    values = parse_pairs(text.splitlines())
    values.update(parse_pairs(overrides))
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path, overrides=()) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


def serialize_config(cfg: TrainConfig) -> str:
    return "".join(f"{name} = {_format_value(getattr(cfg, name))}\n" for name in _FIELDS)
