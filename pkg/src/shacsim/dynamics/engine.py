"""Differentiable planar articulated-body dynamics.

Forward dynamics follows the composite rigid-body approach: the joint-space
mass matrix is assembled from body Jacobians, factorized once per step with a
Cholesky decomposition, and the factor is cached for reuse in the backward
pass.  Velocity-product and gravity terms come from a Newton-Euler style
acceleration recursion evaluated at zero joint acceleration.  Contact is a
penalty model (normal stiffness/damping plus a saturated linear friction law)
against the ground plane y = 0; joint limits are one-sided penalty springs.
Integration is semi-implicit Euler.

Everything is recorded on the autodiff tape, so a step is an exactly
differentiable map (q, qd, tau) -> (q', qd') with all branch decisions frozen
at forward time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tape as T
from ..tape import Tensor
from .model import ArticulatedModel

V_T_EPSILON = 1e-6  # tangential speed below which friction is exactly zero
_BIG = 1e30  # stand-in for +/- inf in unlimited joint bounds


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray

    def copy(self):
        return SimState(self.q.copy(), self.qd.copy())


@dataclass
class AdjointState:
    dq: np.ndarray
    dqd: np.ndarray


class StepRecord:
    """Everything the backward pass needs about one forward step."""

    def __init__(self, model, q_in, qd_in, act_in, q_out, qd_out, cache, dt, squeeze):
        self.model = model
        self.q_in, self.qd_in, self.act_in = q_in, qd_in, act_in
        self.q_out, self.qd_out = q_out, qd_out
        self.dt = dt
        self._squeeze = squeeze
        # cached values, exposed for inspection and tests
        self.chol_factor = cache.chol
        self.contacts = cache.contacts
        self.bias = cache.bias
        self.limit_forces = cache.limit
        self.q = q_in.data.copy()
        self.qd = qd_in.data.copy()
        self.action = act_in.data.copy()


class _Cache:
    __slots__ = ("chol", "contacts", "bias", "limit")

    def __init__(self):
        self.chol = None
        self.contacts = []
        self.bias = None
        self.limit = None


def _perp(v):
    """90-degree CCW rotation of (N,2) vectors."""
    return T.stack([-v[:, 1], v[:, 0]], axis=1)


class _Body:
    __slots__ = ("phi", "p", "cols", "ang_row", "omega", "a_o", "j3", "ang", "jcom")


def _rot_const(phi, vec, n):
    """World-frame image of a constant body-frame vector (None when zero)."""
    if not np.any(vec):
        return None
    vx, vy = vec
    if phi is None:
        return Tensor(np.broadcast_to(np.asarray(vec, dtype=np.float64), (n, 2)))
    c, s = T.cos(phi), T.sin(phi)
    return T.stack([c * vx - s * vy, s * vx + c * vy], axis=1)


def _kinematics(model, q, qd):
    """Forward kinematics, origin Jacobian columns, and the zero-acceleration
    Newton-Euler recursion.  Returns one _Body per link."""
    n = q.data.shape[0]
    dof = model.dof
    zero2 = Tensor(np.zeros((n, 2)))
    bodies = []
    for joint in model.joints:
        b = _Body()
        parent = bodies[joint.parent] if joint.parent >= 0 else None
        k = joint.dof_index
        phi_p = parent.phi if parent is not None else None
        p_p = parent.p if parent is not None else None
        omega_p = parent.omega if parent is not None else None
        a_op = parent.a_o if parent is not None else None

        t_w = _rot_const(phi_p, joint.translation, n)

        # own-origin pose
        if joint.kind == "free":
            b.p = t_w + q[:, k:k + 2] if t_w is not None else q[:, k:k + 2]
            b.phi = q[:, k + 2]
            d_off = None  # no parent
        elif joint.kind == "revolute":
            anchor = _addn(p_p, t_w)
            b.p = anchor if anchor is not None else zero2
            qk = q[:, k]
            b.phi = phi_p + qk if phi_p is not None else qk
            d_off = t_w
        else:  # prismatic
            b.phi = phi_p
            u_w = _rot_const(phi_p, joint.axis, n)
            slide = q[:, k].reshape(-1, 1) * u_w
            base = _addn(p_p, t_w)
            b.p = _addn(base, slide)
            d_off = _addn(t_w, slide)  # own origin relative to parent origin

        # Jacobian columns: transport the parent's columns to the new origin,
        # then add this joint's own column(s)
        if parent is not None:
            cols = list(parent.cols)
            ang_row = parent.ang_row.copy()
            if d_off is not None and ang_row.any():
                pd = _perp(d_off)
                for j in range(dof):
                    if ang_row[j]:
                        cols[j] = cols[j] + pd if cols[j] is not None else pd
        else:
            cols = [None] * dof
            ang_row = np.zeros(dof)

        if joint.kind == "free":
            ex = np.zeros((n, 2)); ex[:, 0] = 1.0
            ey = np.zeros((n, 2)); ey[:, 1] = 1.0
            cols[k], cols[k + 1], cols[k + 2] = Tensor(ex), Tensor(ey), None
            ang_row[k + 2] = 1.0
            b.omega = qd[:, k + 2]
            b.a_o = None
        elif joint.kind == "revolute":
            cols[k] = None
            ang_row[k] = 1.0
            qdk = qd[:, k]
            b.omega = omega_p + qdk if omega_p is not None else qdk
            if omega_p is None or d_off is None:
                b.a_o = a_op
            else:
                cen = (omega_p * omega_p).reshape(-1, 1) * d_off
                b.a_o = (a_op - cen) if a_op is not None else -cen
        else:  # prismatic
            cols[k] = u_w
            b.omega = omega_p
            if omega_p is None:
                b.a_o = a_op
            else:
                cor = (2.0 * qd[:, k] * omega_p).reshape(-1, 1) * _perp(u_w)
                b.a_o = _addn(a_op, cor)
                if d_off is not None:
                    cen = (omega_p * omega_p).reshape(-1, 1) * d_off
                    b.a_o = _addn(b.a_o, -cen)

        b.cols = cols
        b.ang_row = ang_row
        bodies.append(b)
    return bodies


def _addn(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _assemble(model, q, qd):
    """Mass matrix and bias forces from the body kinematics.

    Returns (bodies, M, bias) with per-body Jacobians stashed on the bodies.
    """
    n, dof = q.data.shape
    zero2 = Tensor(np.zeros((n, 2)))
    zrow = Tensor(np.zeros((n, 1, dof)))
    bodies = _kinematics(model, q, qd)
    gvec = model.gravity_vector()

    m_mat = None
    bias = None
    for b, link in zip(bodies, model.links):
        cols = [c if c is not None else zero2 for c in b.cols]
        lin = T.stack(cols, axis=2)  # (N, 2, dof)
        ang = Tensor(np.broadcast_to(b.ang_row, (n, 1, dof)))
        b.j3 = T.concat([lin, ang], axis=1)
        b.ang = ang

        c_w = _rot_const(b.phi, link.com, n)
        if c_w is not None:
            shift = T.concat([_perp(c_w).reshape(n, 2, 1) * ang, zrow], axis=1)
            b.jcom = b.j3 + shift
        else:
            b.jcom = b.j3

        w = np.array([link.mass, link.mass, link.inertia]).reshape(1, 3, 1)
        contrib = T.matmul(T.swapaxes(b.jcom, 1, 2), b.jcom * w)
        m_mat = contrib if m_mat is None else m_mat + contrib

        # bias: -J_com^T m (a_com - g); the angular row contributes nothing
        # because all body angular accelerations vanish at zero q̈ in 2D
        a_com = b.a_o
        if b.omega is not None and c_w is not None:
            cen = (b.omega * b.omega).reshape(-1, 1) * c_w
            a_com = _addn(a_com, -cen)
        if a_com is not None:
            f_lin = (a_com - gvec) * link.mass
        else:
            f_lin = Tensor(np.broadcast_to(-gvec * link.mass, (n, 2)))
        f3 = T.concat([f_lin, Tensor(np.zeros((n, 1)))], axis=1)
        term = -T.matmul(T.swapaxes(b.jcom, 1, 2), f3.reshape(n, 3, 1)).reshape(n, dof)
        bias = term if bias is None else bias + term
    return bodies, m_mat, bias


def step(model: ArticulatedModel, q: Tensor, qd: Tensor, tau: Tensor, dt: float,
         cache: _Cache | None = None):
    """One differentiable semi-implicit Euler step.

    q, qd: (N, dof); tau: (N, dof) generalized applied forces.
    Returns (q_next, qd_next); fills ``cache`` when provided.
    """
    n, dof = q.data.shape
    if cache is None:
        cache = _Cache()

    bad = ~(np.isfinite(q.data).all(axis=1) & np.isfinite(qd.data).all(axis=1)
            & np.isfinite(tau.data).all(axis=1))
    any_bad = bool(bad.any())
    if any_bad:
        mask = bad[:, None]
        q = T.where(mask, 0.0, q)
        qd = T.where(mask, 0.0, qd)
        tau = T.where(mask, 0.0, tau)

    bodies, m_mat, bias = _assemble(model, q, qd)
    cache.bias = bias.data.copy()
    rhs = tau + bias

    # contact forces (sphere vs ground plane y = 0)
    cp = model.contact
    cache.contacts = []
    for sph in model.contact_spheres:
        b = bodies[sph.link]
        off_w = _rot_const(b.phi, sph.offset, n)
        center = _addn(b.p, off_w)
        jpt = b.j3[:, :2, :]
        if off_w is not None:
            jpt = jpt + _perp(off_w).reshape(n, 2, 1) * b.ang
        v_pt = T.matmul(jpt, qd.reshape(n, dof, 1)).reshape(n, 2)
        d = center[:, 1] - sph.radius
        ddot = v_pt[:, 1]
        vt = v_pt[:, 0]
        pen = T.minimum(d, 0.0)
        fn = (cp.k_d * ddot - cp.k_n) * pen
        fnorm = T.abs_(fn)
        active = np.abs(vt.data) >= V_T_EPSILON
        sgn = np.where(vt.data >= 0.0, 1.0, -1.0)
        ft_mag = T.minimum(cp.k_t * T.abs_(vt), cp.mu * fnorm)
        ft = T.where(active, ft_mag * (-sgn), 0.0)
        f = T.stack([ft, fn], axis=1)
        rhs = rhs + T.matmul(T.swapaxes(jpt, 1, 2), f.reshape(n, 2, 1)).reshape(n, dof)
        cache.contacts.append({
            "d": d.data.copy(), "d_rate": ddot.data.copy(), "v_t": vt.data.copy(),
            "normal": np.array([0.0, 1.0]), "active": (pen.data < 0.0),
            "friction_active": active.copy(),
        })

    # joint limit penalties
    if model.limited.any():
        lo = np.where(model.limited, model.limit_lower, -_BIG)
        hi = np.where(model.limited, model.limit_upper, _BIG)
        below = q.data < lo
        above = q.data > hi
        f_lim = T.where(below, model.limit_k * (lo - q), 0.0) \
            + T.where(above, model.limit_k * (hi - q), 0.0)
        rhs = rhs + f_lim
        cache.limit = f_lim.data.copy()
    else:
        cache.limit = np.zeros((n, dof))

    qdd, chol = T.spd_solve(m_mat, rhs)
    cache.chol = chol

    qd2 = qd + qdd * dt
    q2 = q + qd2 * dt

    if any_bad:
        mask = bad[:, None]
        q2 = T.where(mask, np.nan, q2)
        qd2 = T.where(mask, np.nan, qd2)
    return q2, qd2


def actuation(model: ArticulatedModel, action: Tensor):
    """Scatter actuated torques into a full generalized-force vector."""
    n = action.data.shape[0]
    zero = Tensor(np.zeros(n))
    act_slot = {int(d): i for i, d in enumerate(model.actuated)}
    cols = [action[:, act_slot[j]] if j in act_slot else zero for j in range(model.dof)]
    return T.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# plain (non-tape) queries


def mass_matrix(model: ArticulatedModel, q) -> np.ndarray:
    """Joint-space mass matrix M(q), symmetric positive definite."""
    q2, single = _as_batch(q)
    with T.no_grad():
        _, m_mat, _ = _assemble(model, Tensor(q2), Tensor(np.zeros_like(q2)))
    return m_mat.data[0] if single else m_mat.data


def bias_forces(model: ArticulatedModel, q, qd) -> np.ndarray:
    """Generalized bias c(q, qd), gravity included: M q̈ = c + τ + Jᵀf."""
    q2, single = _as_batch(q)
    qd2, _ = _as_batch(qd)
    with T.no_grad():
        _, _, bias = _assemble(model, Tensor(q2), Tensor(qd2))
    return bias.data[0] if single else bias.data


def contact_force(params, d, d_rate, n, v_t):
    """Penalty contact force for one contact point.

    Returns (f_c, f_t) as vectors along ``n`` and against ``v_t``.
    """
    n = np.asarray(n, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    f_c = (-params.k_n + params.k_d * d_rate) * min(d, 0.0) * n
    vnorm = np.linalg.norm(v_t)
    if vnorm < V_T_EPSILON:
        return f_c, np.zeros_like(v_t)
    mag = min(params.k_t * vnorm, params.mu * np.linalg.norm(f_c))
    return f_c, -(v_t / vnorm) * mag


def joint_limit_force(k_limit, q, q_lower, q_upper):
    """One-sided penalty force of a joint limit."""
    if not q_lower < q_upper:
        raise ValueError(f"joint limit bounds inverted: [{q_lower}, {q_upper}]")
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    out = np.where(q < q_lower, k_limit * (q_lower - q), out)
    out = np.where(q > q_upper, k_limit * (q_upper - q), out)
    return out if out.ndim else float(out)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


# ---------------------------------------------------------------------------
# record-based step API


def forward_step(model: ArticulatedModel, state: SimState, action, dt: float):
    """Advance one step; returns (next_state, StepRecord).

    The record retains the recorded computation so ``backward_step`` can
    evaluate the exact adjoint, reusing the cached Cholesky factor.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    q, single = _as_batch(state.q)
    qd, _ = _as_batch(state.qd)
    action = np.asarray(action, dtype=np.float64)
    act2 = action[None, :] if action.ndim == 1 else action
    if act2.shape[1] != model.num_actuated:
        raise ValueError(
            f"action length {act2.shape[1]} != actuated dof count {model.num_actuated}")

    q_in = Tensor(q.copy(), requires_grad=True)
    qd_in = Tensor(qd.copy(), requires_grad=True)
    act_in = Tensor(act2.copy(), requires_grad=True)
    cache = _Cache()
    tau = actuation(model, act_in)
    q2, qd2 = step(model, q_in, qd_in, tau, dt, cache)
    nq, nqd = q2.data.copy(), qd2.data.copy()
    if single:
        nq, nqd = nq[0], nqd[0]
    rec = StepRecord(model, q_in, qd_in, act_in, q2, qd2, cache, dt, single)
    return SimState(nq, nqd), rec


def backward_step(model: ArticulatedModel, record: StepRecord, adjoint_next: AdjointState):
    """Exact adjoint of ``forward_step``: maps dL/d(next state) to
    (dL/d(prev state), dL/d(action))."""
    gq = np.asarray(adjoint_next.dq, dtype=np.float64)
    gqd = np.asarray(adjoint_next.dqd, dtype=np.float64)
    if record._squeeze:
        gq, gqd = gq[None, :], gqd[None, :]
    if gq.shape != record.q_out.data.shape or gqd.shape != record.qd_out.data.shape:
        raise ValueError("adjoint shape does not match the recorded step dof")
    for t in (record.q_in, record.qd_in, record.act_in):
        t.zero_grad()
    T.backward_multi([(record.q_out, gq), (record.qd_out, gqd)])
    dq = record.q_in.grad if record.q_in.grad is not None else np.zeros_like(gq)
    dqd = record.qd_in.grad if record.qd_in.grad is not None else np.zeros_like(gqd)
    da = record.act_in.grad if record.act_in.grad is not None else np.zeros_like(record.act_in.data)
    if record._squeeze:
        dq, dqd, da = dq[0], dqd[0], da[0]
    return AdjointState(dq, dqd), da
