"""Run configuration: schema, defaults, validation, file/CLI resolution.

A run config is a flat YAML mapping.  Precedence is CLI override > file >
default.  Fields defaulting to ``None`` are resolved per environment after
the environment name is known (network sizes, horizon, torque limit,
substep count, truncated-window length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import yaml

ENVS = ("cartpole", "hopper")
ALGOS = ("shac", "bptt", "shac-no-critic")

# per-env resolution of the None defaults
_ENV_DEFAULTS = {
    "cartpole": {"horizon": 240, "torque_limit": 40.0, "substeps": 4,
                 "actor_hidden": [64, 64], "critic_hidden": [64, 64],
                 "bptt_window": 64},
    "hopper": {"horizon": 1000, "torque_limit": 60.0, "substeps": 16,
               "actor_hidden": [128, 64, 32], "critic_hidden": [64, 64],
               "bptt_window": 128},
}


@dataclass
class RunConfig:
    env: str = "cartpole"
    algo: str = "shac"
    seed: int = 0
    out: str = "run"
    # optimization
    h: int = 32
    n_envs: int = 64
    episodes: int = 500
    gamma: float = 0.99
    lam: float = 0.95
    actor_lr: float = 2e-3
    critic_lr: float = 5e-4
    lr_decay: str = "linear"  # linear | none
    target_alpha: float = 0.995
    adam_beta1: float = 0.7
    adam_beta2: float = 0.95
    critic_iters: int = 16
    critic_minibatches: int = 4
    # networks / policy
    actor_hidden: list = None
    critic_hidden: list = None
    policy: str = "stochastic"  # stochastic | deterministic
    state_dep_std: bool = False
    # environment & physics
    horizon: int = None
    torque_limit: float = None
    dt: float = 1.0 / 60.0
    substeps: int = None
    k_n: float = 1.0e4
    k_d: float = 1.0e2
    k_t: float = 1.0e3
    mu: float = 0.9
    k_limit: float = 1.0e3
    init_pos: float = 0.2
    init_vel: float = 0.1
    init_angle: float = math.pi
    init_angvel: float = 0.1
    init_perturb: float = 0.05
    # truncated-window baseline
    bptt_window: int = None
    # harness
    eval_every: int = 10
    eval_rollouts: int = 16
    save_every: int = 0  # 0 = final checkpoint only
    grad_log_every: int = 0  # 0 = no per-entry actor gradient dumps


_FIELDS = {f.name for f in fields(RunConfig)}

_INT_FIELDS = {"seed", "h", "n_envs", "episodes", "critic_iters",
               "critic_minibatches", "horizon", "substeps", "bptt_window",
               "eval_every", "eval_rollouts", "save_every", "grad_log_every"}
_FLOAT_FIELDS = {"gamma", "lam", "actor_lr", "critic_lr", "target_alpha",
                 "adam_beta1", "adam_beta2", "torque_limit", "dt", "k_n",
                 "k_d", "k_t", "mu", "k_limit", "init_pos", "init_vel",
                 "init_angle", "init_angvel", "init_perturb"}


class ConfigError(ValueError):
    pass


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key in _INT_FIELDS:
            iv = int(value)
            if float(value) != iv:
                raise ValueError
            return iv
        if key in _FLOAT_FIELDS:
            return float(value)
        if key == "state_dep_std":
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError
            return bool(value)
        if key in ("actor_hidden", "critic_hidden"):
            if isinstance(value, str):
                value = [int(v) for v in value.split(",") if v.strip()]
            return [int(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r}") from None


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig):
    _check(cfg.env in ENVS, f"env: unknown environment {cfg.env!r}")
    _check(cfg.algo in ALGOS, f"algo: unknown algorithm {cfg.algo!r}")
    _check(cfg.policy in ("stochastic", "deterministic"),
           f"policy: unknown mode {cfg.policy!r}")
    _check(cfg.lr_decay in ("linear", "none"), f"lr_decay: unknown {cfg.lr_decay!r}")
    _check(0.0 < cfg.gamma <= 1.0, f"gamma: must be in (0, 1], got {cfg.gamma}")
    _check(0.0 <= cfg.lam <= 1.0, f"lam: must be in [0, 1], got {cfg.lam}")
    _check(0.0 <= cfg.target_alpha <= 1.0,
           f"target_alpha: must be in [0, 1], got {cfg.target_alpha}")
    _check(cfg.h >= 1, f"h: must be >= 1, got {cfg.h}")
    _check(cfg.n_envs >= 1, f"n_envs: must be >= 1, got {cfg.n_envs}")
    _check(cfg.episodes >= 0, f"episodes: must be >= 0, got {cfg.episodes}")
    _check(cfg.actor_lr > 0, f"actor_lr: must be > 0, got {cfg.actor_lr}")
    _check(cfg.critic_lr > 0, f"critic_lr: must be > 0, got {cfg.critic_lr}")
    _check(0 <= cfg.adam_beta1 < 1 and 0 <= cfg.adam_beta2 < 1,
           "adam_beta1/adam_beta2: must be in [0, 1)")
    _check(cfg.critic_iters >= 1 and cfg.critic_minibatches >= 1,
           "critic_iters and critic_minibatches must be >= 1")
    _check(cfg.dt > 0, f"dt: must be > 0, got {cfg.dt}")
    _check(cfg.substeps >= 1, f"substeps: must be >= 1, got {cfg.substeps}")
    _check(cfg.horizon >= 1, f"horizon: must be >= 1, got {cfg.horizon}")
    _check(cfg.bptt_window >= 1, f"bptt_window: must be >= 1, got {cfg.bptt_window}")
    _check(cfg.torque_limit > 0, f"torque_limit: must be > 0, got {cfg.torque_limit}")
    for k in ("k_n", "k_d", "k_t", "mu", "k_limit"):
        _check(getattr(cfg, k) >= 0, f"{k}: must be >= 0")
    _check(cfg.eval_every >= 1, f"eval_every: must be >= 1, got {cfg.eval_every}")
    _check(cfg.eval_rollouts >= 1, f"eval_rollouts: must be >= 1")
    _check(cfg.save_every >= 0 and cfg.grad_log_every >= 0,
           "save_every and grad_log_every must be >= 0")
    _check(all(w >= 1 for w in cfg.actor_hidden), "actor_hidden: widths must be >= 1")
    _check(all(w >= 1 for w in cfg.critic_hidden), "critic_hidden: widths must be >= 1")
    return cfg


def make_config(file_values=None, overrides=None) -> RunConfig:
    """Resolve a config from file values and CLI overrides over defaults."""
    cfg = RunConfig()
    for source, label in ((file_values, "config file"), (overrides, "override")):
        if not source:
            continue
        for key, value in source.items():
            key = str(key).replace("-", "_")
            if key not in _FIELDS:
                raise ConfigError(f"unknown {label} key {key!r}")
            if value is None:
                continue
            setattr(cfg, key, _coerce(key, value))
    env_def = _ENV_DEFAULTS.get(cfg.env, {})
    for key, value in env_def.items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, value)
    return validate(cfg)


def parse_config(path=None, overrides=None) -> RunConfig:
    file_values = None
    if path is not None:
        with open(path) as f:
            file_values = yaml.safe_load(f) or {}
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
    return make_config(file_values, overrides)


def config_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


def build_env(cfg: RunConfig, n, seed):
    """Construct the configured environment batch."""
    from .envs import CartPoleEnv, HopperEnv

    common = dict(n=n, seed=seed, horizon=cfg.horizon, dt=cfg.dt,
                  substeps=cfg.substeps, action_scale=cfg.torque_limit)
    if cfg.env == "cartpole":
        return CartPoleEnv(init_pos=cfg.init_pos, init_vel=cfg.init_vel,
                           init_angle=cfg.init_angle, init_angvel=cfg.init_angvel,
                           **common)
    return HopperEnv(init_perturb=cfg.init_perturb, k_n=cfg.k_n, k_d=cfg.k_d,
                     k_t=cfg.k_t, mu=cfg.mu, k_limit=cfg.k_limit, **common)
