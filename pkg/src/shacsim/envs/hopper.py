"""Planar hopper: free-floating torso with a 3-joint leg and a contact foot.

q = (base x, base y, base angle, hip, knee, ankle).  Height is measured
relative to the nominal standing pose; the episode fails when the base drops
more than 0.45 m below standing.  Reward encourages forward velocity, height
above a soft floor, and an upright torso, with a quadratic action cost.
"""

from __future__ import annotations

import numpy as np

from .. import tape as T
from ..tape import Tensor
from ..dynamics.model import build_model
from .base import EnvBatch

STAND_HEIGHT = 1.01     # base height with the leg extended and foot on ground
FAIL_HEIGHT = -0.45     # relative height below which the episode fails
ANGLE_SCALE = np.pi / 6.0  # torso-angle reward normalization (30 degrees)


def hopper_model(gravity=-9.81, k_n=1.0e4, k_d=1.0e2, k_t=1.0e3, mu=0.9,
                 k_limit=1.0e3):
    return build_model({
        "gravity": gravity,
        "contact": {"k_n": k_n, "k_d": k_d, "k_t": k_t, "mu": mu},
        "joints": [
            {"kind": "free", "parent": -1},
            {"kind": "revolute", "parent": 0, "translation": [0.0, 0.0],
             "limit": {"k": k_limit, "lower": -0.9, "upper": 0.9}},
            {"kind": "revolute", "parent": 1, "translation": [0.0, -0.45],
             "limit": {"k": k_limit, "lower": -1.5, "upper": 1.5}},
            {"kind": "revolute", "parent": 2, "translation": [0.0, -0.5],
             "limit": {"k": k_limit, "lower": -0.8, "upper": 0.8}},
        ],
        "links": [
            {"mass": 3.5, "inertia": 0.05, "com": [0.0, 0.2]},     # torso
            {"mass": 4.0, "inertia": 0.07, "com": [0.0, -0.225]},  # thigh
            {"mass": 2.7, "inertia": 0.06, "com": [0.0, -0.25]},   # shin
            {"mass": 5.0, "inertia": 0.07, "com": [0.065, 0.0]},   # foot
        ],
        "contact_spheres": [
            {"link": 3, "offset": [-0.13, 0.0], "radius": 0.06},
            {"link": 3, "offset": [0.26, 0.0], "radius": 0.06},
        ],
        "actuated": [3, 4, 5],
    })


class HopperEnv(EnvBatch):
    name = "hopper"
    obs_dim = 11
    act_dim = 3
    default_horizon = 1000

    def __init__(self, n, seed, horizon=1000, dt=1.0 / 60.0, substeps=16,
                 action_scale=60.0, init_perturb=0.05, k_n=1.0e4, k_d=1.0e2,
                 k_t=1.0e3, mu=0.9, k_limit=1.0e3):
        model = hopper_model(k_n=k_n, k_d=k_d, k_t=k_t, mu=mu, k_limit=k_limit)
        super().__init__(model, n, horizon, dt, substeps, action_scale, seed)
        self.init_perturb = init_perturb
        self.q_nominal = np.array([0.0, STAND_HEIGHT, 0.0, 0.0, 0.0, 0.0])

    def sample_init(self, rng):
        eps = self.init_perturb
        q = self.q_nominal + rng.uniform(-eps, eps, size=6)
        qd = rng.uniform(-eps, eps, size=6)
        return q, qd

    def observe(self, q, qd):
        h = q[:, 1] - STAND_HEIGHT
        return T.concat([
            T.stack([h, q[:, 2], qd[:, 0], qd[:, 1], qd[:, 2]], axis=1),
            q[:, 3:6], qd[:, 3:6],
        ], axis=1)

    def reward(self, q, qd, action):
        h = q[:, 1] - STAND_HEIGHT
        dh = T.clip(h + 0.3, -1.0, 0.3)
        r_height = T.where(dh.data < 0.0, -200.0 * dh * dh, dh)
        theta = q[:, 2]
        r_angle = 1.0 - (theta / ANGLE_SCALE) ** 2
        r_action = 0.1 * (action * action).sum(axis=1)
        return qd[:, 0] + r_height + r_angle - r_action

    def failed(self, q, qd):
        bad = super().failed(q, qd)
        with np.errstate(invalid="ignore"):
            low = (q[:, 1] - STAND_HEIGHT) < FAIL_HEIGHT
        return bad | np.where(np.isfinite(q[:, 1]), low, True)
