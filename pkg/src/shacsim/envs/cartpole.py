"""CartPole swing-up: a cart on a horizontal slider with an unactuated pole.

State q = (cart position x, pole angle theta), theta = 0 pointing up.  The
pole starts anywhere on the circle and the cart must swing it upright and
balance near x = 0.  No contact, no joint limits, no early termination.
"""

from __future__ import annotations

import numpy as np

from .. import tape as T
from ..tape import Tensor
from ..dynamics.model import build_model
from .base import EnvBatch

CART_MASS = 1.0
POLE_MASS = 0.1
POLE_COM = 0.5       # distance from the pivot to the pole center of mass, m
POLE_INERTIA = 0.01  # about the center of mass, kg*m^2


def cartpole_model(gravity=-9.81):
    return build_model({
        "gravity": gravity,
        "joints": [
            {"kind": "prismatic", "parent": -1, "axis": [1.0, 0.0]},
            {"kind": "revolute", "parent": 0, "translation": [0.0, 0.0]},
        ],
        "links": [
            {"mass": CART_MASS, "inertia": 1.0, "com": [0.0, 0.0]},
            {"mass": POLE_MASS, "inertia": POLE_INERTIA, "com": [0.0, POLE_COM]},
        ],
        "actuated": [0],
    })


class CartPoleEnv(EnvBatch):
    name = "cartpole"
    obs_dim = 5
    act_dim = 1
    default_horizon = 240

    def __init__(self, n, seed, horizon=240, dt=1.0 / 60.0, substeps=4,
                 action_scale=40.0, init_pos=0.2, init_vel=0.1,
                 init_angle=np.pi, init_angvel=0.1):
        super().__init__(cartpole_model(), n, horizon, dt, substeps, action_scale, seed)
        self.init_pos = init_pos
        self.init_vel = init_vel
        self.init_angle = init_angle
        self.init_angvel = init_angvel

    def sample_init(self, rng):
        q = np.array([rng.uniform(-self.init_pos, self.init_pos),
                      rng.uniform(-self.init_angle, self.init_angle)])
        qd = np.array([rng.uniform(-self.init_vel, self.init_vel),
                       rng.uniform(-self.init_angvel, self.init_angvel)])
        return q, qd

    def observe(self, q, qd):
        th = q[:, 1]
        return T.stack([q[:, 0], qd[:, 0], T.sin(th), T.cos(th), qd[:, 1]], axis=1)

    def reward(self, q, qd, action):
        th, thd = q[:, 1], qd[:, 1]
        x, xd = q[:, 0], qd[:, 0]
        # The pole angle is a revolute coordinate: score its representative in
        # (-pi, pi] so that every full rotation of the pole is equivalent and
        # the angle cost stays consistent with the sin/cos observation.
        th = th - (2.0 * np.pi) * np.round(np.asarray(th.data) / (2.0 * np.pi))
        return -(th * th) - 0.1 * (thd * thd) - 0.05 * (x * x) - 0.1 * (xd * xd)
