"""Loss-landscape scans, finite-difference gradient audits, and gradient
histograms for trained policies.

All evaluations use common random numbers: the environment batch and the
action-noise stream are re-seeded identically before every policy variant,
so differences between evaluations come from the parameters alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .tape import Tensor
from .config import build_env
from .trainer import TrainerState, const_tensors, rollout_window


@dataclass
class LandscapeScan:
    weight_name: str
    weight_index: int
    deltas: np.ndarray
    losses: np.ndarray
    evaluator: str
    trajectories: int
    seed: int

    def total_variation(self):
        return float(np.abs(np.diff(self.losses)).sum())


@dataclass
class GradientReport:
    entries: np.ndarray
    analytic: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray
    eps: float


def _fresh_rollout(state: TrainerState, window, seed, trajectories, value_fn,
                   compute_grad=False):
    """One fixed-seed evaluation of the window loss from fresh resets."""
    cfg = state.cfg
    env = build_env(cfg, trajectories, seed)
    env.reset_rows(np.arange(trajectories))
    noise_rng = np.random.Generator(np.random.PCG64(seed))
    stochastic = cfg.policy == "stochastic"
    if compute_grad:
        actor_t = state.actor.tensors()
        loss, _ = rollout_window(env, state.policy, actor_t, window, cfg.gamma,
                                 state.normalizer, noise_rng, value_fn, stochastic)
        T.backward(loss)
        return float(loss.data), state.actor.collect_grad(actor_t)
    with T.no_grad():
        actor_t = const_tensors(state.actor)
        loss, _ = rollout_window(env, state.policy, actor_t, window, cfg.gamma,
                                 state.normalizer, noise_rng, value_fn, stochastic)
    return float(loss.data), None


def evaluate_loss(state: TrainerState, evaluator, seed, trajectories,
                  compute_grad=False):
    """Policy loss under one of two evaluators, common random numbers.

    "full": discounted reward loss over the whole task horizon, no critic.
    "surrogate": the short-horizon window loss with the target critic's
    terminal value (the training objective).
    """
    if evaluator == "full":
        return _fresh_rollout(state, state.cfg.horizon, seed, trajectories,
                              None, compute_grad)
    if evaluator == "surrogate":
        return _fresh_rollout(state, state.cfg.h, seed, trajectories,
                              state.value_fn(), compute_grad)
    raise ValueError(f"unknown evaluator {evaluator!r} (use full or surrogate)")


def landscape_scan(state: TrainerState, weight_name, weight_index, deltas,
                   evaluator, trajectories, seed) -> LandscapeScan:
    """Scan the loss along one actor weight: theta_k -> theta_k + delta."""
    if weight_name not in state.actor.slices:
        raise ValueError(f"unknown actor parameter group {weight_name!r}")
    sl = state.actor.slices[weight_name]
    if not 0 <= weight_index < sl.stop - sl.start:
        raise ValueError(f"weight index {weight_index} out of range for "
                         f"{weight_name!r} (size {sl.stop - sl.start})")
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise ValueError("deltas must be strictly increasing")
    flat_index = sl.start + weight_index
    base = state.actor.flat[flat_index]
    losses = np.empty(deltas.size)
    try:
        for i, dlt in enumerate(deltas):
            state.actor.flat[flat_index] = base + dlt
            losses[i], _ = evaluate_loss(state, evaluator, seed, trajectories)
    finally:
        state.actor.flat[flat_index] = base
    return LandscapeScan(weight_name, weight_index, deltas, losses,
                         evaluator, trajectories, seed)


def finite_diff_gradient(loss_fn, params_flat, eps, entries,
                         analytic=None) -> GradientReport:
    """Central differences of ``loss_fn`` (a pure function of the parameter
    vector, internally re-seeded) at the selected entries."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    params_flat = np.asarray(params_flat, dtype=np.float64)
    entries = np.asarray(entries, dtype=np.intp)
    fd = np.empty(entries.size)
    for i, k in enumerate(entries):
        p = params_flat.copy()
        p[k] += eps
        hi = loss_fn(p)
        p[k] -= 2.0 * eps
        lo = loss_fn(p)
        fd[i] = (hi - lo) / (2.0 * eps)
    if analytic is None:
        analytic = np.full(entries.size, np.nan)
    else:
        analytic = np.asarray(analytic, dtype=np.float64)[entries]
    denom = np.maximum(np.abs(analytic), np.abs(fd))
    rel = np.where(denom > 0, np.abs(analytic - fd) / np.where(denom > 0, denom, 1.0), 0.0)
    return GradientReport(entries, analytic, fd, rel, eps)


def gradient_histogram(run_dir, episodes, bins=64, bin_range=None):
    """Bin the logged per-entry actor gradients of selected episodes.

    Expects ``actor_grad_<episode>.npy`` files written during training.
    Returns {episode: (bin_edges, counts)}.
    """
    import os

    out = {}
    for ep in episodes:
        path = os.path.join(run_dir, f"actor_grad_{ep}.npy")
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"no logged actor gradient for episode {ep} at {path}")
        grad = np.load(path)
        counts, edges = np.histogram(grad, bins=bins, range=bin_range)
        out[ep] = (edges, counts)
    return out


def write_landscape_csv(scan: LandscapeScan, path):
    with open(path, "w") as f:
        f.write(f"# evaluator={scan.evaluator} weight={scan.weight_name}"
                f"[{scan.weight_index}] trajectories={scan.trajectories} "
                f"seed={scan.seed} loss=discounted\n")
        f.write("delta,loss\n")
        for d, l in zip(scan.deltas, scan.losses):
            f.write(f"{float(d)!r},{float(l)!r}\n")


def write_gradcheck_csv(report: GradientReport, path):
    with open(path, "w") as f:
        f.write(f"# eps={float(report.eps)!r}\n")
        f.write("index,analytic,fd,rel_err\n")
        for k, a, d, r in zip(report.entries, report.analytic, report.fd,
                              report.rel_err):
            f.write(f"{int(k)},{float(a)!r},{float(d)!r},{float(r)!r}\n")


def write_gradhist_csv(edges, counts, path):
    with open(path, "w") as f:
        f.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            f.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")
