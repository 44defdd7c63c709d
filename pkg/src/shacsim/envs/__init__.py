from .base import EnvBatch
from .cartpole import CartPoleEnv, cartpole_model
from .hopper import HopperEnv, hopper_model


def make_env(name, n, seed, **kwargs):
    """Construct an environment batch by name ("cartpole" or "hopper")."""
    envs = {"cartpole": CartPoleEnv, "hopper": HopperEnv}
    if name not in envs:
        raise ValueError(f"unknown environment {name!r} (choose from {sorted(envs)})")
    return envs[name](n=n, seed=seed, **kwargs)
