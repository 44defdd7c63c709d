"""Short-horizon differentiable-simulation policy learning.

Each learning episode rolls N environments forward h steps through the
differentiable dynamics, starting from the states carried over from the
previous episode (gradients are cut at the boundary).  The policy loss is the
negative mean of discounted window rewards plus a discounted terminal value
from a slowly-updated target critic; its gradient reaches the policy through
the simulator's adjoints.  The critic is fit to td-lambda targets by
minibatched Adam on MSE, and observations are whitened by a running
normalizer whose statistics are frozen during each episode.

A truncated-window baseline ("bptt") uses the same rollout machinery with no
critic, and "shac-no-critic" drops only the terminal-value term.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tape as T
from .tape import Tensor
from .config import RunConfig, build_env
from .nn import AdamState, MlpSpec, Policy, RunningNormalizer, mlp_forward


@dataclass
class TrajectoryBatch:
    """One episode's rollout data, laid out (step, instance, ...).

    obs/raw_obs are the (normalized/raw) policy inputs; obs_next is the
    normalized post-step observation before any reset, used for value
    bootstrapping.  gacc holds the discount coefficient each reward carries
    in the policy loss; boot_weight the coefficient of V(obs_next) per step
    (nonzero at window end and horizon truncations).
    """

    obs: np.ndarray
    obs_next: np.ndarray
    raw_obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    done: np.ndarray
    fail: np.ndarray
    gacc: np.ndarray
    boot_weight: np.ndarray


def const_tensors(param_set):
    """Parameter tensors that participate in graphs without receiving grads."""
    return {n: Tensor(param_set.view(n)) for n in param_set.names}


def rollout_window(env, policy, actor_params, window, gamma, normalizer,
                   noise_rng, value_fn=None, stochastic=True):
    """Roll the batch ``window`` steps and build the policy loss.

    Returns (loss Tensor, TrajectoryBatch).  The loss is
    -(1/(N*window)) * sum_i [ sum_t gamma^{t-t0} r_t + boot terms ], where
    the discount accumulator restarts at every reset, failed instances drop
    their bootstrap, and horizon truncations keep it.  The environment's
    stored state advances to the end-of-window (post-reset) state.
    """
    n, d = env.n, env.obs_dim
    qT, qdT = Tensor(env.q.copy()), Tensor(env.qd.copy())
    gacc = np.ones(n)

    obs_st = np.empty((window, n, d))
    obs2_st = np.empty((window, n, d))
    raw_st = np.empty((window, n, d))
    act_st = np.empty((window, n, env.act_dim))
    rew_st = np.empty((window, n))
    done_st = np.zeros((window, n), dtype=bool)
    fail_st = np.zeros((window, n), dtype=bool)
    gacc_st = np.empty((window, n))
    boot_st = np.zeros((window, n))
    total = None

    for t in range(window):
        obs = env.observe(qT, qdT)
        obs_n = normalizer.apply(obs)
        raw_st[t] = obs.data
        obs_st[t] = obs_n.data
        noise = noise_rng.standard_normal((n, env.act_dim)) if stochastic else None
        a = policy.sample(actor_params, obs_n, noise)
        act_st[t] = a.data

        q2, qd2 = env.step_tensors(qT, qdT, a)
        r = env.reward(q2, qd2, a)
        env.steps += 1
        fail = env.failed(q2.data, qd2.data)
        horizon = (env.steps >= env.horizon) & ~fail
        done = fail | horizon

        bad_r = ~np.isfinite(r.data)
        if bad_r.any():
            r = T.where(bad_r, 0.0, r)
        obs2 = normalizer.apply(env.observe(q2, qd2))
        bad_o = ~np.isfinite(obs2.data).all(axis=1)
        if bad_o.any():
            obs2 = T.where(bad_o[:, None], 0.0, obs2)

        rew_st[t], done_st[t], fail_st[t] = r.data, done, fail
        gacc_st[t] = gacc
        obs2_st[t] = obs2.data

        term = T.tsum(r * gacc)
        total = term if total is None else total + term

        bw = gacc * gamma * (~fail if t == window - 1 else horizon)
        if value_fn is not None and bw.any():
            boot_st[t] = bw
            total = total + T.tsum(value_fn(obs2) * bw)

        if done.any():
            env.q, env.qd = q2.data.copy(), qd2.data.copy()
            env.reset_rows(np.flatnonzero(done))
            mask = done[:, None]
            qT = T.where(mask, env.q, q2)
            qdT = T.where(mask, env.qd, qd2)
        else:
            qT, qdT = q2, qd2
        gacc = gacc * gamma
        gacc[done] = 1.0

    env.q, env.qd = qT.data.copy(), qdT.data.copy()
    loss = total * (-1.0 / (n * window))
    batch = TrajectoryBatch(obs_st, obs2_st, raw_st, act_st, rew_st,
                            done_st, fail_st, gacc_st, boot_st)
    return loss, batch


def td_lambda_targets(rewards, next_values, done, fail, gamma, lam):
    """Exponentially-blended k-step value targets, computed backward in time.

    rewards/next_values/done/fail are (h, N).  k-step returns never cross a
    termination: failed steps contribute no bootstrap, truncated steps (window
    end or horizon) bootstrap one step, and the blend weight beyond the
    segment end goes to the last admissible return.
    """
    h, n = rewards.shape
    targets = np.empty((h, n))
    nxt = None
    for t in range(h - 1, -1, -1):
        boot = rewards[t] + gamma * next_values[t]
        if t == h - 1:
            tv = boot
        else:
            blend = rewards[t] + gamma * ((1.0 - lam) * next_values[t] + lam * nxt)
            tv = np.where(done[t], boot, blend)
        targets[t] = np.where(fail[t], rewards[t], tv)
        nxt = targets[t]
    return targets


def critic_fit(critic, spec, obs, targets, adam, iterations, minibatches,
               shuffle_rng, lr_scale=1.0):
    """Minibatched Adam on MSE.  Returns the last minibatch loss."""
    b = obs.shape[0]
    last = np.nan
    for _ in range(iterations):
        perm = shuffle_rng.permutation(b)
        for idx in np.array_split(perm, minibatches):
            pt = critic.tensors()
            pred = mlp_forward(pt, spec, Tensor(obs[idx]))[:, 0]
            diff = pred - targets[idx]
            loss = (diff * diff).mean()
            T.backward(loss)
            adam.update(critic.flat, critic.collect_grad(pt), lr_scale)
            last = float(loss.data)
    return last


def target_update(target, critic, alpha):
    """target <- alpha * target + (1 - alpha) * critic, elementwise."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    target.flat[...] = alpha * target.flat + (1.0 - alpha) * critic.flat


class TrainerState:
    """Everything a training run carries across episodes."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.seed).generate_state(8)
        self.env = build_env(cfg, cfg.n_envs, int(seeds[0]))
        self.env.reset_rows(np.arange(cfg.n_envs))

        self.policy = Policy(self.env.obs_dim, self.env.act_dim,
                             cfg.actor_hidden, cfg.state_dep_std)
        self.actor = self.policy.make_params(np.random.Generator(np.random.PCG64(int(seeds[1]))))
        self.critic_spec = MlpSpec(self.env.obs_dim, list(cfg.critic_hidden), 1)
        from .nn import init_mlp
        self.critic = init_mlp(self.critic_spec,
                               np.random.Generator(np.random.PCG64(int(seeds[2]))))
        self.target = self.critic.copy()

        self.actor_adam = AdamState(cfg.actor_lr, cfg.adam_beta1, cfg.adam_beta2)
        self.critic_adam = AdamState(cfg.critic_lr, cfg.adam_beta1, cfg.adam_beta2)
        self.normalizer = RunningNormalizer(self.env.obs_dim)
        self.noise_rng = np.random.Generator(np.random.PCG64(int(seeds[3])))
        self.shuffle_rng = np.random.Generator(np.random.PCG64(int(seeds[4])))
        self.episode = 0

    def value_fn(self):
        pt = const_tensors(self.target)

        def fn(obs):
            return mlp_forward(pt, self.critic_spec, obs)[:, 0]

        return fn

    def lr_scale(self):
        if self.cfg.lr_decay == "none":
            return 1.0
        return 1.0 - self.episode / max(self.cfg.episodes, 1)


def evaluate(state: TrainerState, episode):
    """Deterministic full-horizon rollouts; returns (mean, std) of the
    undiscounted return.  Failed instances stop accumulating."""
    cfg = state.cfg
    seed = int(np.random.SeedSequence([cfg.seed, 0x5EED, episode]).generate_state(1)[0])
    env = build_env(cfg, cfg.eval_rollouts, seed)
    obs = env.reset()
    returns = np.zeros(env.n)
    alive = np.ones(env.n, dtype=bool)
    params = const_tensors(state.actor)
    with T.no_grad():
        for _ in range(cfg.horizon):
            obs_n = state.normalizer.apply(obs)
            act = state.policy.sample(params, Tensor(obs_n), None).data
            obs, rew, done, _ = env.env_step(act)
            returns += np.where(alive, rew, 0.0)
            alive &= ~done
            if not alive.any():
                break
    return float(returns.mean()), float(returns.std())


def run_episode(state: TrainerState):
    """One learning episode.  Returns a metrics dict (plus phase timings)."""
    cfg = state.cfg
    use_critic = cfg.algo == "shac"
    window = cfg.bptt_window if cfg.algo == "bptt" else cfg.h
    stochastic = cfg.policy == "stochastic"
    lr_scale = state.lr_scale()

    t0 = time.perf_counter()
    actor_t = state.actor.tensors()
    value_fn = state.value_fn() if use_critic else None
    loss, batch = rollout_window(state.env, state.policy, actor_t, window,
                                 cfg.gamma, state.normalizer, state.noise_rng,
                                 value_fn, stochastic)
    t1 = time.perf_counter()

    aborted = not np.isfinite(loss.data)
    grad = np.zeros(state.actor.size)
    if not aborted:
        T.backward(loss)
        grad = state.actor.collect_grad(actor_t)
        aborted = not np.isfinite(grad).all()
    t2 = time.perf_counter()

    if aborted:
        state.env.reset_rows(np.arange(state.env.n))
    else:
        state.actor_adam.update(state.actor.flat, grad, lr_scale)

    value_loss = np.nan
    if use_critic and not aborted:
        h, n, d = batch.obs.shape
        with T.no_grad():
            nv = state.value_fn()(Tensor(batch.obs_next.reshape(h * n, d))).data
        targets = td_lambda_targets(batch.rewards, nv.reshape(h, n),
                                    batch.done, batch.fail, cfg.gamma, cfg.lam)
        value_loss = critic_fit(state.critic, state.critic_spec,
                                batch.obs.reshape(h * n, d), targets.reshape(h * n),
                                state.critic_adam, cfg.critic_iters,
                                cfg.critic_minibatches, state.shuffle_rng, lr_scale)
        target_update(state.target, state.critic, cfg.target_alpha)
    t3 = time.perf_counter()

    finite = np.isfinite(batch.raw_obs).all(axis=2)
    state.normalizer.update(batch.raw_obs[finite])

    row = {
        "episode": state.episode + 1,
        "env_steps": (state.episode + 1) * state.env.n * window,
        "policy_loss": float(loss.data),
        "value_loss_final": value_loss,
        "actor_grad_norm": float(np.linalg.norm(grad)),
        "terminations_in_episode": int(batch.done.sum()),
        "aborted": aborted,
        "grad": grad,
    }
    timings = {"forward_s": t1 - t0, "backward_s": t2 - t1, "critic_s": t3 - t2}
    state.episode += 1
    return row, timings


def train(cfg: RunConfig, out_dir=None, state=None, log=None):
    """Run (or resume) a full training loop; returns (state, metric rows).

    When ``out_dir`` is given, metrics.csv / timers.csv / checkpoints are
    written there (appending when resuming from a nonzero episode).
    """
    from . import checkpoint as ckpt
    from .metrics import MetricsWriter

    if state is None:
        state = TrainerState(cfg)
    writer = MetricsWriter(out_dir, resume=state.episode > 0) if out_dir else None
    rows = []
    while state.episode < cfg.episodes:
        ep_index = state.episode
        row, timings = run_episode(state)
        grad = row.pop("grad")
        if row.pop("aborted"):
            if log:
                log(f"episode {row['episode']}: non-finite loss/gradient, "
                    "skipped update and reset environments")
        if (ep_index + 1) % cfg.eval_every == 0 or ep_index + 1 == cfg.episodes:
            mean, std = evaluate(state, ep_index)
            row["eval_return_mean"], row["eval_return_std"] = mean, std
        else:
            row["eval_return_mean"] = row["eval_return_std"] = None
        rows.append(row)
        if writer:
            writer.write(row, timings)
        if out_dir and cfg.grad_log_every and (ep_index + 1) % cfg.grad_log_every == 0:
            np.save(f"{out_dir}/actor_grad_{ep_index + 1}.npy", grad)
        if out_dir and cfg.save_every and (ep_index + 1) % cfg.save_every == 0:
            ckpt.save_checkpoint(state, f"{out_dir}/ckpt_{ep_index + 1}")
    if out_dir:
        ckpt.save_checkpoint(state, f"{out_dir}/ckpt_final")
    if writer:
        writer.close()
    return state, rows


def train_shac(cfg: RunConfig, out_dir=None, **kw):
    if cfg.algo not in ("shac", "shac-no-critic"):
        raise ValueError(f"train_shac expects a shac config, got algo={cfg.algo!r}")
    return train(cfg, out_dir, **kw)


def train_bptt(cfg: RunConfig, out_dir=None, **kw):
    if cfg.algo != "bptt":
        raise ValueError(f"train_bptt expects algo=bptt, got {cfg.algo!r}")
    return train(cfg, out_dir, **kw)
