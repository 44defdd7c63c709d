"""End-to-end acceptance gates.

One test per criterion; each prints a single PASS/FAIL line with its measured
numbers (visible under ``pytest -s``).  The training-based gates share
session-scoped fixtures so determinism, resume, landscape, and gradient-scale
checks reuse the same runs.
"""

import os

import numpy as np
import pytest

import shacsim.tape as T
from shacsim.tape import Tensor
from shacsim.analysis import evaluate_loss, finite_diff_gradient, landscape_scan
from shacsim.checkpoint import load_checkpoint, save_checkpoint
from shacsim.config import make_config, build_env
from shacsim.dynamics import build_model
from shacsim.trainer import TrainerState, evaluate, td_lambda_targets, train

from conftest import adjoint_vs_fd, relative_errors, switching_margin
from test_trainer import random_batch, td_targets_bruteforce


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} — {detail}")


# ---------------------------------------------------------------------------
# 1. single-step adjoint exactness over random models and states


def random_cartpole_variant(rng):
    return build_model({
        "gravity": -rng.uniform(5.0, 15.0),
        "joints": [
            {"kind": "prismatic", "parent": -1, "axis": [1.0, 0.0]},
            {"kind": "revolute", "parent": 0,
             "translation": rng.uniform(-0.2, 0.2, 2).tolist()},
        ],
        "links": [
            {"mass": rng.uniform(0.5, 2.0), "inertia": 1.0,
             "com": rng.uniform(-0.1, 0.1, 2).tolist()},
            {"mass": rng.uniform(0.1, 0.5), "inertia": rng.uniform(0.01, 0.05),
             "com": [rng.uniform(-0.1, 0.1), rng.uniform(0.2, 0.8)]},
        ],
        "actuated": [0],
    })


def random_hopper_variant(rng):
    return build_model({
        "gravity": -9.81,
        "contact": {"k_n": rng.uniform(5e3, 2e4), "k_d": rng.uniform(50, 200),
                    "k_t": rng.uniform(500, 2000), "mu": rng.uniform(0.5, 1.2)},
        "joints": [
            {"kind": "free", "parent": -1},
            {"kind": "revolute", "parent": 0, "translation": [0.0, -0.45],
             "limit": {"k": 1e3, "lower": -0.9, "upper": 0.9}},
            {"kind": "revolute", "parent": 1, "translation": [0.0, -0.5],
             "limit": {"k": 1e3, "lower": -1.5, "upper": 1.5}},
            {"kind": "revolute", "parent": 2, "translation": [0.0, -0.3],
             "limit": {"k": 1e3, "lower": -0.8, "upper": 0.8}},
        ],
        "links": [
            {"mass": rng.uniform(2.0, 5.0), "inertia": rng.uniform(0.05, 0.3),
             "com": [0.0, rng.uniform(0.0, 0.3)]},
            {"mass": rng.uniform(2.0, 5.0), "inertia": rng.uniform(0.05, 0.3),
             "com": [0.0, -rng.uniform(0.1, 0.3)]},
            {"mass": rng.uniform(1.0, 4.0), "inertia": rng.uniform(0.02, 0.2),
             "com": [0.0, -rng.uniform(0.1, 0.3)]},
            {"mass": rng.uniform(2.0, 6.0), "inertia": rng.uniform(0.02, 0.2),
             "com": [rng.uniform(0.0, 0.1), 0.0]},
        ],
        "contact_spheres": [
            {"link": 3, "offset": [-0.13, 0.0], "radius": 0.06},
            {"link": 3, "offset": [0.26, 0.0], "radius": 0.06},
        ],
        "actuated": [3, 4, 5],
    })


def test_criterion_1_gradient_exactness():
    rng = np.random.default_rng(100)
    worst_free, worst_contact = 0.0, 0.0
    checked = 0
    for v in range(10):  # contact-free mechanism variants
        model = random_cartpole_variant(rng)
        q = rng.normal(size=(100, 2))
        qd = rng.normal(size=(100, 2))
        a = rng.normal(size=(100, 1)) * 5.0
        an, fd = adjoint_vs_fd(model, q, qd, a, 1.0 / 240.0, eps=1e-5)
        worst_free = max(worst_free, relative_errors(an, fd).max())
        checked += 100
    for v in range(10):  # contacting mechanism variants
        model = random_hopper_variant(rng)
        q = np.tile([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], (100, 1))
        q += rng.uniform(-0.2, 0.2, size=(100, 6))
        q[:, 1] = rng.uniform(0.85, 1.05, 100)
        qd = rng.normal(size=(100, 6))
        a = rng.normal(size=(100, 3)) * 10.0
        margin = switching_margin(model, q, qd, a, 1e-3)
        keep = margin > 1e-4
        an, fd = adjoint_vs_fd(model, q, qd, a, 1e-3)
        worst_contact = max(worst_contact,
                            relative_errors(an[keep], fd[keep]).max())
        checked += int(keep.sum())
    ok = worst_free < 1e-6 and worst_contact < 1e-4
    report(1, ok, f"{checked} trials; worst rel err contact-free "
                  f"{worst_free:.2e} (tol 1e-6), in-contact "
                  f"{worst_contact:.2e} (tol 1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 2. chained-rollout actor gradient vs finite differences


def test_criterion_2_chained_gradient():
    cfg = make_config({}, {"env": "cartpole", "h": 8, "n_envs": 4, "seed": 2,
                           "actor_hidden": [16], "critic_hidden": [16],
                           "eval_every": 1000})
    state = TrainerState(cfg)
    loss0, grad = evaluate_loss(state, "surrogate", seed=11, trajectories=4,
                                compute_grad=True)

    def loss_fn(flat):
        old = state.actor.flat.copy()
        state.actor.flat[...] = flat
        try:
            val, _ = evaluate_loss(state, "surrogate", seed=11, trajectories=4)
        finally:
            state.actor.flat[...] = old
        return val

    rng = np.random.default_rng(0)
    entries = sorted(rng.choice(state.actor.flat.size, size=128,
                                replace=False).tolist())
    rep = finite_diff_gradient(loss_fn, state.actor.flat.copy(), 1e-5,
                               entries, analytic=grad)
    floor = 1e-4 * np.abs(grad).max()
    rel = np.abs(rep.analytic - rep.fd) / np.maximum(
        np.maximum(np.abs(rep.analytic), np.abs(rep.fd)), floor)
    frac = float((rel < 1e-4).mean())
    ok = frac >= 0.99
    report(2, ok, f"{len(entries)} entries, {frac:.1%} within 1e-4 relative "
                  f"(gate 99%); worst rel err {rel.max():.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 3. td-lambda oracle equivalence


def test_criterion_3_td_lambda_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        h = int(rng.integers(1, 10))
        n = int(rng.integers(1, 6))
        gamma = rng.uniform(0.8, 1.0)
        lam = rng.uniform(0.0, 1.0)
        r, v, done, fail = random_batch(rng, h, n)
        got = td_lambda_targets(r, v, done, fail, gamma, lam)
        want = td_targets_bruteforce(r, v, done, fail, gamma, lam)
        worst = max(worst, float(np.abs(got - want).max()))
    # closed forms
    r, v, done, fail = random_batch(rng, 6, 3)
    lam0 = td_lambda_targets(r, v, done, fail, 0.9, 0.0)
    exact0 = np.abs(lam0 - np.where(fail, r, r + 0.9 * v)).max()
    nt = np.zeros((5, 2), dtype=bool)
    r1 = rng.normal(size=(5, 2))
    v1 = rng.normal(size=(5, 2))
    lam1 = td_lambda_targets(r1, v1, nt, nt, 0.95, 1.0)
    exact1 = 0.0
    for t in range(5):
        want = sum(0.95 ** l * r1[t + l] for l in range(5 - t))
        want = want + 0.95 ** (5 - t) * v1[4]
        exact1 = max(exact1, np.abs(lam1[t] - want).max())
    ok = worst < 1e-10 and exact0 == 0.0 and exact1 < 1e-12
    report(3, ok, f"100 random batches, worst |Δ| {worst:.1e} (tol 1e-10); "
                  f"λ=0 dev {exact0:.1e}, λ=1 dev {exact1:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 4 & 8. cartpole swing-up training runs (shared fixture)

CART_OPTS = {"env": "cartpole", "algo": "shac", "episodes": 500, "h": 32,
             "n_envs": 64, "actor_lr": 0.01, "critic_lr": 0.001,
             "target_alpha": 0.2, "gamma": 0.99, "lam": 0.95,
             "eval_every": 100, "save_every": 250}


def wrapped(theta):
    return theta - 2.0 * np.pi * np.round(theta / (2.0 * np.pi))


def eval_success(state, n=16):
    """Median final-pose statistics over n deterministic 240-step rollouts."""
    cfg = state.cfg
    seed = int(np.random.SeedSequence([cfg.seed, 0xE7A1]).generate_state(1)[0])
    env = build_env(cfg, n, seed)
    env.reset()
    params = {k: Tensor(state.actor.view(k)) for k in state.actor.names}
    th = np.zeros((240, n))
    xx = np.zeros((240, n))
    with T.no_grad():
        for t in range(240):
            obs = state.normalizer.apply(
                env.observe(Tensor(env.q), Tensor(env.qd)))
            act = state.policy.sample(params, obs, None).data
            env.env_step(act)
            th[t], xx[t] = env.q[:, 1], env.q[:, 0]
    mean_th = np.abs(wrapped(th[-50:])).mean(axis=0)
    mean_x = np.abs(xx[-50:]).mean(axis=0)
    return float(np.median(mean_th)), float(np.median(mean_x))


@pytest.fixture(scope="session")
def cartpole_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cartpole_runs")
    runs = {}
    for seed in range(5):
        out = str(base / f"seed{seed}")
        cfg = make_config({}, dict(CART_OPTS, seed=seed))
        train(cfg, out_dir=out)
        runs[seed] = out
    return runs


def test_criterion_4_cartpole_swingup(cartpole_runs):
    wins = []
    details = []
    for seed, out in cartpole_runs.items():
        state = load_checkpoint(os.path.join(out, "ckpt_final"))
        mth, mx = eval_success(state)
        ok = mth < 0.2 and mx < 0.5
        wins.append(ok)
        details.append(f"seed {seed}: |θ|={mth:.3f} |x|={mx:.3f} "
                       f"{'ok' if ok else 'no'}")
    ok = sum(wins) >= 4
    report(4, ok, f"{sum(wins)}/5 seeds succeed (gate ≥4); "
                  + "; ".join(details))
    assert ok


def test_criterion_8_determinism_and_resume(cartpole_runs, tmp_path):
    base_out = cartpole_runs[0]
    # (a) identical seed, identical metrics bytes
    rerun = str(tmp_path / "rerun")
    cfg = make_config({}, dict(CART_OPTS, seed=0))
    train(cfg, out_dir=rerun)
    bytes_a = open(os.path.join(base_out, "metrics.csv"), "rb").read()
    bytes_b = open(os.path.join(rerun, "metrics.csv"), "rb").read()
    same = bytes_a == bytes_b
    # (b) resume at episode 250 reproduces rows 251-500
    resume_out = str(tmp_path / "resume")
    os.makedirs(resume_out, exist_ok=True)
    resumed = load_checkpoint(os.path.join(base_out, "ckpt_250"))
    train(resumed.cfg, out_dir=resume_out, state=resumed)
    tail_orig = bytes_a.decode().splitlines()[251:501]
    tail_res = open(os.path.join(resume_out, "metrics.csv")).read().splitlines()
    rows_match = tail_orig == tail_res[:250] and len(tail_res) == 250
    ok = same and rows_match
    report(8, ok, f"same-seed metrics byte-identical: {same}; "
                  f"resume rows 251–500 identical: {rows_match}")
    assert ok


# ---------------------------------------------------------------------------
# 5-7. hopper ablation runs (shared fixture)

HOP_OPTS = {"env": "hopper", "h": 8, "n_envs": 32, "substeps": 8,
            "horizon": 400, "eval_every": 1000, "eval_rollouts": 16,
            "actor_lr": 2e-3, "critic_lr": 2e-3, "target_alpha": 0.2}
HOP_EPISODES = 400          # actor-critic and no-critic arms
BPTT_WINDOW = 128
BPTT_EPISODES = HOP_EPISODES * HOP_OPTS["h"] // BPTT_WINDOW  # matched env steps
SEEDS = range(5)


def final_return(state):
    return evaluate(state, state.cfg.episodes)[0]


@pytest.fixture(scope="session")
def hopper_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("hopper_runs")
    results = {"shac": [], "bptt": [], "shac-no-critic": []}
    ckpt_mid = str(base / "shac0_mid")
    for algo in ("shac", "shac-no-critic", "bptt"):
        for seed in SEEDS:
            opts = dict(HOP_OPTS, algo=algo, seed=seed)
            if algo == "bptt":
                opts.update(bptt_window=BPTT_WINDOW, episodes=BPTT_EPISODES)
            else:
                opts.update(episodes=HOP_EPISODES)
            cfg = make_config({}, opts)
            state = TrainerState(cfg)
            from shacsim.trainer import run_episode
            for ep in range(cfg.episodes):
                run_episode(state)
                if algo == "shac" and seed == 0 and ep + 1 == HOP_EPISODES // 2:
                    save_checkpoint(state, ckpt_mid)
            results[algo].append(final_return(state))
    return results, ckpt_mid


def test_criterion_5_ablation_ordering(hopper_runs):
    results, _ = hopper_runs
    med = {k: float(np.median(v)) for k, v in results.items()}
    iqr = {k: float(np.subtract(*np.percentile(v, [75, 25])))
           for k, v in results.items()}
    checks = []
    for other in ("bptt", "shac-no-critic"):
        margin = med["shac"] - med[other]
        bound = max(iqr["shac"], iqr[other])
        checks.append(margin > bound)
    ok = all(checks)
    report(5, ok,
           f"median returns shac {med['shac']:.1f}, bptt {med['bptt']:.1f}, "
           f"no-critic {med['shac-no-critic']:.1f}; IQRs "
           f"{iqr['shac']:.1f}/{iqr['bptt']:.1f}/{iqr['shac-no-critic']:.1f};"
           f" vs bptt: {checks[0]}, vs no-critic: {checks[1]}")
    assert ok


def test_criterion_6_landscape_smoothing(hopper_runs):
    _, ckpt_mid = hopper_runs
    state = load_checkpoint(ckpt_mid)
    rng = np.random.default_rng(6)
    names = [n for n in state.actor.names if n.startswith("w")]
    deltas = np.linspace(-1.0, 1.0, 7).tolist()
    smoother = 0
    pairs = []
    for k in range(10):
        name = names[int(rng.integers(len(names)))]
        idx = int(rng.integers(state.actor.view(name).size))
        tv = {}
        for ev in ("surrogate", "full"):
            scan = landscape_scan(state, name, idx, deltas, ev,
                                  trajectories=128, seed=60 + k)
            tv[ev] = scan.total_variation()
        smoother += tv["surrogate"] < tv["full"]
        pairs.append(f"{name}[{idx}] {tv['surrogate']:.2f}<{tv['full']:.2f}:"
                     f"{tv['surrogate'] < tv['full']}")
    ok = smoother >= 8
    report(6, ok, f"surrogate smoother on {smoother}/10 weights (gate ≥8); "
                  + "; ".join(pairs))
    assert ok


def test_criterion_7_gradient_magnitude(hopper_runs):
    _, ckpt_mid = hopper_runs
    state = load_checkpoint(ckpt_mid)
    _, grad_full = evaluate_loss(state, "full", seed=7, trajectories=16,
                                 compute_grad=True)
    _, grad_short = evaluate_loss(state, "surrogate", seed=7, trajectories=16,
                                  compute_grad=True)
    big = float(np.abs(grad_full).max())
    small = float(np.abs(grad_short).max())
    ratio = big / max(small, 1e-300)
    ok = ratio >= 10.0
    report(7, ok, f"max|grad| full-horizon {big:.3e} vs short-horizon "
                  f"{small:.3e}; ratio {ratio:.1f}x (gate ≥10x)")
    assert ok
