"""Shared oracles and helpers for the test suite."""

import numpy as np
import pytest

from shacsim.dynamics import SimState, forward_step, backward_step
from shacsim.dynamics.engine import V_T_EPSILON


def adjoint_vs_fd(model, q, qd, action, dt, eps=1e-6):
    """Batched check data: analytic (dq, dqd, da) for a random output adjoint
    and the matching finite-difference directional derivatives.

    q, qd: (N, dof); action: (N, na).  Returns (analytic, fd) as (N, dim)
    arrays over the concatenated input vector [q, qd, action].
    """
    n, dof = q.shape
    na = action.shape[1]
    rng = np.random.default_rng(q.size + 17)
    wq = rng.normal(size=(n, dof))
    wqd = rng.normal(size=(n, dof))

    from shacsim.dynamics import AdjointState
    _, rec = forward_step(model, SimState(q, qd), action, dt)
    adj, da = backward_step(model, rec, AdjointState(wq, wqd))
    analytic = np.concatenate([adj.dq, adj.dqd, da], axis=1)

    def loss(qq, qqd, aa):
        st, _ = forward_step(model, SimState(qq, qqd), aa, dt)
        return (st.q * wq).sum(axis=1) + (st.qd * wqd).sum(axis=1)

    fd = np.empty((n, 2 * dof + na))
    for k in range(2 * dof + na):
        dq = np.zeros((n, dof))
        dqd = np.zeros((n, dof))
        da_ = np.zeros((n, na))
        if k < dof:
            dq[:, k] = eps
        elif k < 2 * dof:
            dqd[:, k - dof] = eps
        else:
            da_[:, k - 2 * dof] = eps
        hi = loss(q + dq, qd + dqd, action + da_)
        lo = loss(q - dq, qd - dqd, action - da_)
        fd[:, k] = (hi - lo) / (2 * eps)
    return analytic, fd


def relative_errors(analytic, fd):
    """Per-row worst relative error, guarding tiny entries with a row scale."""
    scale = np.maximum(np.abs(analytic), np.abs(fd))
    floor = 1e-4 * np.maximum(scale.max(axis=1, keepdims=True), 1.0)
    rel = np.abs(analytic - fd) / np.maximum(scale, floor)
    return rel.max(axis=1)


def switching_margin(model, q, qd, action, dt):
    """Distance of each batch row from contact/limit switching surfaces.

    Rows near a kink (penetration onset, friction-cone saturation, tangential
    epsilon, limit boundary) are excluded from gradient comparisons.
    """
    n = q.shape[0]
    margin = np.full(n, np.inf)
    _, rec = forward_step(model, SimState(q, qd), action, dt)
    for c in rec.contacts:
        margin = np.minimum(margin, np.abs(c["d"]))
        vt = np.abs(c["v_t"])
        margin = np.minimum(margin, np.abs(vt - V_T_EPSILON))
        k_t, mu = model.contact.k_t, model.contact.mu
        fn = np.abs((model.contact.k_d * c["d_rate"] - model.contact.k_n)
                    * np.minimum(c["d"], 0.0))
        sat = np.abs(k_t * vt - mu * fn) / max(k_t, 1.0)
        margin = np.minimum(margin, np.where(fn > 0, sat, np.inf))
    if model.limited.any():
        lim = model.limited
        margin = np.minimum(margin, np.abs(q[:, lim] - model.limit_lower[lim]).min(axis=1))
        margin = np.minimum(margin, np.abs(q[:, lim] - model.limit_upper[lim]).min(axis=1))
    return margin
