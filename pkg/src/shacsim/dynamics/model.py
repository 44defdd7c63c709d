"""Articulated rigid-body model description and validation.

Mechanisms are planar kinematic trees built from prismatic, revolute and
free-planar joints, one link per joint.  Models can be constructed from a
plain nested dict (see ``build_model``) or loaded from an equivalent YAML
file (``load_model``).

Schema of the model description::

    gravity: -9.81            # m/s^2, along world -y when negative
    contact:                  # optional; needed only if contact_spheres given
      k_n: 1.0e4              # normal stiffness, N/m
      k_d: 1.0e2              # damping, N*s/m^2
      k_t: 1.0e3              # friction stiffness, N*s/m
      mu: 0.9                 # friction coefficient
    joints:                   # tree order, parent index < own index
      - kind: prismatic | revolute | free
        parent: -1            # -1 = world
        axis: [1.0, 0.0]      # prismatic only, in parent frame
        translation: [0, 0]   # joint anchor in parent frame, m
        limit: {k: 1.0e3, lower: -1.0, upper: 1.0}   # optional, 1-dof joints
    links:                    # parallel to joints
      - {mass: 1.0, inertia: 0.1, com: [0.0, 0.5]}
    contact_spheres:
      - {link: 2, offset: [0.0, 0.0], radius: 0.05}
    actuated: [0]             # dof indices that receive torque
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

JOINT_DOF = {"prismatic": 1, "revolute": 1, "free": 3}


class ModelError(ValueError):
    """Raised when a model description violates an invariant."""


@dataclass
class Joint:
    kind: str
    parent: int
    translation: np.ndarray
    axis: np.ndarray
    dof_index: int  # index of this joint's first dof in q


@dataclass
class Link:
    mass: float
    inertia: float  # about the center of mass, kg*m^2
    com: np.ndarray  # offset from the link frame origin, link frame


@dataclass
class ContactSphere:
    link: int
    offset: np.ndarray
    radius: float


@dataclass
class ContactParams:
    k_n: float = 0.0
    k_d: float = 0.0
    k_t: float = 0.0
    mu: float = 0.0


@dataclass
class ArticulatedModel:
    joints: list[Joint]
    links: list[Link]
    contact_spheres: list[ContactSphere]
    contact: ContactParams
    gravity: float
    dof: int
    actuated: np.ndarray  # dof indices receiving torque
    # per-dof joint limit arrays
    limit_k: np.ndarray = field(default=None)
    limit_lower: np.ndarray = field(default=None)
    limit_upper: np.ndarray = field(default=None)
    limited: np.ndarray = field(default=None)

    @property
    def num_actuated(self):
        return len(self.actuated)

    def gravity_vector(self):
        return np.array([0.0, self.gravity])


def _require(cond, msg):
    if not cond:
        raise ModelError(msg)


def build_model(description: dict) -> ArticulatedModel:
    """Validate a model description and compute derived quantities."""
    desc = dict(description)
    joints_in = desc.get("joints", [])
    links_in = desc.get("links", [])
    _require(len(joints_in) > 0, "joints: empty model")
    _require(len(joints_in) == len(links_in),
             f"links: expected {len(joints_in)} entries, got {len(links_in)}")

    joints, links = [], []
    dof = 0
    for i, j in enumerate(joints_in):
        kind = j.get("kind")
        _require(kind in JOINT_DOF, f"joints[{i}].kind: unknown kind {kind!r}")
        parent = int(j.get("parent", -1))
        _require(-1 <= parent < i, f"joints[{i}].parent: must be < {i} (tree order)")
        if kind == "free":
            _require(parent == -1, f"joints[{i}].parent: free joints must attach to the world")
        axis = np.asarray(j.get("axis", [1.0, 0.0]), dtype=np.float64)
        if kind == "prismatic":
            n = np.linalg.norm(axis)
            _require(n > 0, f"joints[{i}].axis: zero axis")
            axis = axis / n
        translation = np.asarray(j.get("translation", [0.0, 0.0]), dtype=np.float64)
        joints.append(Joint(kind, parent, translation, axis, dof))
        dof += JOINT_DOF[kind]

    for i, l in enumerate(links_in):
        mass = float(l["mass"])
        inertia = float(l["inertia"])
        _require(mass > 0, f"links[{i}].mass: must be > 0, got {mass}")
        _require(inertia > 0, f"links[{i}].inertia: must be > 0, got {inertia}")
        com = np.asarray(l.get("com", [0.0, 0.0]), dtype=np.float64)
        links.append(Link(mass, inertia, com))

    limit_k = np.zeros(dof)
    limit_lower = np.full(dof, -np.inf)
    limit_upper = np.full(dof, np.inf)
    limited = np.zeros(dof, dtype=bool)
    for i, j in enumerate(joints_in):
        lim = j.get("limit")
        if lim is None:
            continue
        _require(joints[i].kind != "free", f"joints[{i}].limit: not supported on free joints")
        k = float(lim["k"])
        lo, hi = float(lim["lower"]), float(lim["upper"])
        _require(k >= 0, f"joints[{i}].limit.k: must be >= 0, got {k}")
        _require(lo < hi, f"joints[{i}].limit: lower {lo} must be < upper {hi}")
        d = joints[i].dof_index
        limit_k[d], limit_lower[d], limit_upper[d], limited[d] = k, lo, hi, True

    spheres = []
    for i, s in enumerate(desc.get("contact_spheres", [])):
        link = int(s["link"])
        _require(0 <= link < len(links), f"contact_spheres[{i}].link: out of range")
        radius = float(s["radius"])
        _require(radius > 0, f"contact_spheres[{i}].radius: must be > 0, got {radius}")
        spheres.append(ContactSphere(link, np.asarray(s.get("offset", [0, 0]), dtype=np.float64), radius))

    cp = desc.get("contact", {}) or {}
    contact = ContactParams(
        k_n=float(cp.get("k_n", 0.0)), k_d=float(cp.get("k_d", 0.0)),
        k_t=float(cp.get("k_t", 0.0)), mu=float(cp.get("mu", 0.0)))
    for name in ("k_n", "k_d", "k_t", "mu"):
        _require(getattr(contact, name) >= 0, f"contact.{name}: must be >= 0")

    actuated = np.asarray(desc.get("actuated", []), dtype=np.intp)
    _require(np.all((actuated >= 0) & (actuated < dof)), "actuated: dof index out of range")

    return ArticulatedModel(
        joints=joints, links=links, contact_spheres=spheres, contact=contact,
        gravity=float(desc.get("gravity", 0.0)), dof=dof, actuated=actuated,
        limit_k=limit_k, limit_lower=limit_lower, limit_upper=limit_upper,
        limited=limited)


def load_model(path) -> ArticulatedModel:
    with open(path) as f:
        return build_model(yaml.safe_load(f))
