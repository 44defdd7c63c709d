"""Checkpoint persistence: plain-text JSON header + little-endian float64 payload.

Layout:
    line 1: magic and format version ("shacsim-checkpoint 1")
    line 2: one JSON object (config, counters, rng states, array manifest)
    rest:   the manifest's arrays concatenated as little-endian float64

Round-tripping a trainer state is bit-exact: resuming from a checkpoint
reproduces the uninterrupted run's metrics rows.
"""

from __future__ import annotations

import json

import numpy as np

from .config import config_dict, make_config

MAGIC = "shacsim-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(state):
    env = state.env
    return [
        ("actor", state.actor.flat),
        ("critic", state.critic.flat),
        ("target", state.target.flat),
        ("actor_adam_m", state.actor_adam.m if state.actor_adam.m is not None
         else np.zeros(state.actor.size)),
        ("actor_adam_v", state.actor_adam.v if state.actor_adam.v is not None
         else np.zeros(state.actor.size)),
        ("critic_adam_m", state.critic_adam.m if state.critic_adam.m is not None
         else np.zeros(state.critic.size)),
        ("critic_adam_v", state.critic_adam.v if state.critic_adam.v is not None
         else np.zeros(state.critic.size)),
        ("norm_mean", state.normalizer.mean),
        ("norm_var", state.normalizer.var),
        ("env_q", env.q.ravel()),
        ("env_qd", env.qd.ravel()),
    ]


def save_checkpoint(state, path):
    arrays = _arrays(state)
    header = {
        "config": config_dict(state.cfg),
        "episode": state.episode,
        "actor_adam_t": state.actor_adam.t,
        "critic_adam_t": state.critic_adam.t,
        "norm_count": state.normalizer.count,
        "env_steps": state.env.steps.tolist(),
        "env_rng": [g.bit_generator.state for g in state.env.rngs],
        "noise_rng": state.noise_rng.bit_generator.state,
        "shuffle_rng": state.shuffle_rng.bit_generator.state,
        "manifest": [[name, list(arr.shape)] for name, arr in arrays],
    }
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {VERSION}\n".encode())
        f.write((json.dumps(header) + "\n").encode())
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expect_env=None):
    """Rebuild a TrainerState; rejects version mismatch or truncation."""
    from .trainer import TrainerState

    with open(path, "rb") as f:
        magic = f.readline().decode().strip()
        parts = magic.split()
        if len(parts) != 2 or parts[0] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if int(parts[1]) != VERSION:
            raise CheckpointError(
                f"{path}: format version {parts[1]} != supported {VERSION}")
        header = json.loads(f.readline().decode())
        payload = f.read()

    total = sum(int(np.prod(shape)) for _, shape in header["manifest"])
    if len(payload) != total * 8:
        raise CheckpointError(f"{path}: truncated payload "
                              f"({len(payload)} bytes, expected {total * 8})")
    cfg = make_config(header["config"])
    if expect_env is not None and cfg.env != expect_env:
        raise CheckpointError(
            f"{path}: checkpoint env {cfg.env!r} does not match {expect_env!r}")

    state = TrainerState(cfg)
    flat = np.frombuffer(payload, dtype="<f8")
    offset = 0
    arrs = {}
    for name, shape in header["manifest"]:
        size = int(np.prod(shape))
        arrs[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size

    state.actor.flat[...] = arrs["actor"]
    state.critic.flat[...] = arrs["critic"]
    state.target.flat[...] = arrs["target"]
    state.actor_adam.m = arrs["actor_adam_m"]
    state.actor_adam.v = arrs["actor_adam_v"]
    state.critic_adam.m = arrs["critic_adam_m"]
    state.critic_adam.v = arrs["critic_adam_v"]
    state.actor_adam.t = int(header["actor_adam_t"])
    state.critic_adam.t = int(header["critic_adam_t"])
    state.normalizer.load({"mean": arrs["norm_mean"], "var": arrs["norm_var"],
                           "count": header["norm_count"]})
    env = state.env
    env.q = arrs["env_q"].reshape(env.q.shape)
    env.qd = arrs["env_qd"].reshape(env.qd.shape)
    env.steps = np.asarray(header["env_steps"], dtype=np.int64)
    for g, st in zip(env.rngs, header["env_rng"]):
        g.bit_generator.state = st
    state.noise_rng.bit_generator.state = header["noise_rng"]
    state.shuffle_rng.bit_generator.state = header["shuffle_rng"]
    state.episode = int(header["episode"])
    return state
