"""Command-line interface: train, eval, landscape, gradcheck, gradhist."""

from __future__ import annotations

import argparse
import sys

import numpy as np


def _add_override_flags(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--env", choices=["cartpole", "hopper"])
    p.add_argument("--algo", choices=["shac", "bptt", "shac-no-critic"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--h", type=int, dest="h")
    p.add_argument("--n-envs", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--actor-lr", type=float)
    p.add_argument("--critic-lr", type=float)
    p.add_argument("--target-alpha", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--substeps", type=int)
    p.add_argument("--bptt-window", type=int)
    p.add_argument("--policy", choices=["stochastic", "deterministic"])
    p.add_argument("--eval-every", type=int)
    p.add_argument("--save-every", type=int)
    p.add_argument("--grad-log-every", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any other config field")


def _collect_overrides(args):
    keys = ["seed", "env", "algo", "out", "h", "n_envs", "episodes", "gamma",
            "lam", "actor_lr", "critic_lr", "target_alpha", "horizon",
            "substeps", "bptt_window", "policy", "eval_every", "save_every",
            "grad_log_every"]
    ov = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k] = v
    return ov


def _resolve_config(args):
    from .config import parse_config

    return parse_config(args.config, _collect_overrides(args))


def cmd_train(args):
    from .trainer import train

    cfg = _resolve_config(args)
    out = cfg.out
    print(f"training {cfg.env} with {cfg.algo}, seed {cfg.seed}, "
          f"{cfg.episodes} episodes -> {out}")
    _, rows = train(cfg, out_dir=out, log=print)
    evals = [r["eval_return_mean"] for r in rows if r["eval_return_mean"] is not None]
    if evals:
        print(f"final eval return: {evals[-1]:.3f}")
    return 0


def cmd_eval(args):
    from . import tape as T
    from .checkpoint import load_checkpoint
    from .config import build_env
    from .tape import Tensor
    from .trainer import const_tensors

    state = load_checkpoint(args.checkpoint)
    cfg = state.cfg
    n = args.rollouts
    results = {}
    for mode, stochastic in (("deterministic", False), ("stochastic", True)):
        env = build_env(cfg, n, args.seed)
        noise_rng = np.random.Generator(np.random.PCG64(args.seed))
        obs = env.reset()
        returns = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        params = const_tensors(state.actor)
        with T.no_grad():
            for _ in range(cfg.horizon):
                obs_n = state.normalizer.apply(obs)
                noise = noise_rng.standard_normal((n, env.act_dim)) if stochastic else None
                act = state.policy.sample(params, Tensor(obs_n), noise).data
                obs, rew, done, _ = env.env_step(act)
                returns += np.where(alive, rew, 0.0)
                alive &= ~done
                if not alive.any():
                    break
        results[mode] = (returns.mean(), returns.std())
        print(f"{mode}: return {returns.mean():.3f} +- {returns.std():.3f} "
              f"over {n} rollouts")
    return 0


def cmd_landscape(args):
    from .analysis import landscape_scan, write_landscape_csv
    from .checkpoint import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    deltas = np.linspace(args.delta_min, args.delta_max, args.points)
    scan = landscape_scan(state, args.weight_name, args.weight_index, deltas,
                          args.evaluator, args.trajectories, args.seed)
    write_landscape_csv(scan, args.out)
    print(f"wrote {args.out}; total variation {scan.total_variation():.6g}")
    return 0


def cmd_gradcheck(args):
    from .analysis import evaluate_loss, finite_diff_gradient, write_gradcheck_csv
    from .config import make_config
    from .trainer import TrainerState

    cfg = make_config(None, {
        "env": args.env, "h": args.h, "n_envs": args.n_envs, "seed": args.seed,
        "actor_hidden": [args.width, args.width],
        "critic_hidden": [args.width, args.width],
    })
    state = TrainerState(cfg)
    _, analytic = evaluate_loss(state, "surrogate", args.seed, args.n_envs,
                                compute_grad=True)

    def loss_fn(flat):
        state.actor.flat[...] = flat
        loss, _ = evaluate_loss(state, "surrogate", args.seed, args.n_envs)
        return loss

    base = state.actor.flat.copy()
    rng = np.random.Generator(np.random.PCG64(args.seed))
    n_entries = min(args.entries, state.actor.size)
    entries = np.sort(rng.choice(state.actor.size, size=n_entries, replace=False))
    report = finite_diff_gradient(loss_fn, base, args.eps, entries, analytic)
    state.actor.flat[...] = base
    write_gradcheck_csv(report, args.out)
    scale = np.maximum(np.abs(report.analytic), 1e-8)
    ok = (np.abs(report.analytic - report.fd) / scale) < args.tol
    frac = ok.mean()
    print(f"gradcheck: {ok.sum()}/{ok.size} entries within {args.tol} "
          f"relative ({frac:.1%}); wrote {args.out}")
    return 0 if frac >= 0.99 else 1


def cmd_gradhist(args):
    from .analysis import gradient_histogram, write_gradhist_csv

    import os

    episodes = [int(e) for e in args.episodes.split(",")]
    hists = gradient_histogram(args.run_dir, episodes, bins=args.bins)
    os.makedirs(args.out_dir, exist_ok=True)
    for ep, (edges, counts) in hists.items():
        path = f"{args.out_dir}/gradhist_{ep}.csv"
        write_gradhist_csv(edges, counts, path)
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shacsim",
        description="differentiable planar simulation and short-horizon "
                    "actor-critic policy learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rollouts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("landscape", help="single-weight loss landscape scan")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--weight-name", default="w0")
    p.add_argument("--weight-index", type=int, default=0)
    p.add_argument("--delta-min", type=float, default=-1.0)
    p.add_argument("--delta-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--evaluator", choices=["full", "surrogate"], default="full")
    p.add_argument("--trajectories", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="landscape.csv")
    p.set_defaults(fn=cmd_landscape)

    p = sub.add_parser("gradcheck",
                       help="compare analytic and finite-difference gradients")
    p.add_argument("--env", choices=["cartpole", "hopper"], default="cartpole")
    p.add_argument("--h", type=int, default=8)
    p.add_argument("--n-envs", type=int, default=4)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--entries", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="gradcheck.csv")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gradhist", help="bin logged actor gradients")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--episodes", required=True, help="comma-separated list")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_gradhist)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
