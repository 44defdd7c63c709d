"""Shared machinery for batched differentiable task environments.

A batch holds N independent instances: per-instance random streams, numpy
mirrors of the simulation state, and step counters.  The differentiable path
(observe / step_tensors / reward) operates on tape tensors so a trainer can
chain gradients across steps; ``env_step`` is a plain numpy convenience that
advances the internal state.
"""

from __future__ import annotations

import numpy as np

from .. import tape as T
from ..tape import Tensor
from ..dynamics import engine


class EnvBatch:
    """N parallel instances of one task."""

    # subclasses define: obs_dim, act_dim, default_horizon
    name = "base"

    def __init__(self, model, n, horizon, dt, substeps, action_scale, seed):
        self.model = model
        self.n = int(n)
        self.horizon = int(horizon)
        self.dt = float(dt)
        self.substeps = int(substeps)
        self.action_scale = float(action_scale)
        if self.n < 1 or self.horizon < 1 or self.dt <= 0 or self.substeps < 1:
            raise ValueError("n, horizon, substeps must be >= 1 and dt > 0")
        self.q = np.zeros((self.n, model.dof))
        self.qd = np.zeros((self.n, model.dof))
        self.steps = np.zeros(self.n, dtype=np.int64)
        self.rngs = [np.random.Generator(np.random.PCG64(ss))
                     for ss in np.random.SeedSequence(seed).spawn(self.n)]

    # -- per-task hooks ------------------------------------------------------

    def sample_init(self, rng):
        """Draw (q, qd) for one instance from the initial distribution."""
        raise NotImplementedError

    def observe(self, q: Tensor, qd: Tensor) -> Tensor:
        raise NotImplementedError

    def reward(self, q: Tensor, qd: Tensor, action: Tensor) -> Tensor:
        """Per-instance reward of the post-step state and pre-clamp action."""
        raise NotImplementedError

    def failed(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        """Early-termination mask (failure only, horizon handled separately)."""
        bad = ~(np.isfinite(q).all(axis=1) & np.isfinite(qd).all(axis=1))
        return bad

    # -- batch state management ---------------------------------------------

    def reset_rows(self, idx):
        for i in np.atleast_1d(idx):
            self.q[i], self.qd[i] = self.sample_init(self.rngs[i])
            self.steps[i] = 0

    def reset(self):
        self.reset_rows(np.arange(self.n))
        with T.no_grad():
            return self.observe(Tensor(self.q), Tensor(self.qd)).data

    # -- dynamics ------------------------------------------------------------

    def step_tensors(self, q: Tensor, qd: Tensor, action: Tensor):
        """Substepped differentiable dynamics under a clamped, scaled action."""
        tau = engine.actuation(self.model, T.clip(action, -1.0, 1.0) * self.action_scale)
        sub_dt = self.dt / self.substeps
        for _ in range(self.substeps):
            q, qd = engine.step(self.model, q, qd, tau, sub_dt)
        return q, qd

    def env_step(self, action):
        """Advance the stored numpy state one control step (no gradients).

        Returns (obs, reward, done, reason) arrays; reason is "" while
        running, "failure" on early termination or non-finite dynamics, and
        "horizon" at the task horizon.  The caller decides when to reset.
        """
        action = np.asarray(action, dtype=np.float64).reshape(self.n, self.act_dim)
        with T.no_grad():
            qT, qdT = self.step_tensors(Tensor(self.q), Tensor(self.qd), Tensor(action))
            obs = self.observe(qT, qdT).data
            rew = self.reward(qT, qdT, Tensor(action)).data
        self.q, self.qd = qT.data, qdT.data
        self.steps += 1
        fail = self.failed(self.q, self.qd)
        horizon = self.steps >= self.horizon
        done = fail | horizon
        reason = np.where(fail, "failure", np.where(horizon, "horizon", ""))
        return obs, rew, done, reason

    # -- persistence ---------------------------------------------------------

    def state(self):
        return {
            "q": self.q.copy(), "qd": self.qd.copy(), "steps": self.steps.copy(),
            "rng": [g.bit_generator.state for g in self.rngs],
        }

    def load(self, st):
        self.q = np.asarray(st["q"], dtype=np.float64).copy()
        self.qd = np.asarray(st["qd"], dtype=np.float64).copy()
        self.steps = np.asarray(st["steps"], dtype=np.int64).copy()
        for g, s in zip(self.rngs, st["rng"]):
            g.bit_generator.state = s
