"""Minimal differentiable network stack: MLP with ELU + layer normalization,
reparameterized Gaussian policy, Adam, and a running observation normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .tape import Tensor

LOG_STD_INIT = 0.0
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LN_EPS = 1e-5


@dataclass
class MlpSpec:
    input_dim: int
    hidden: list
    output_dim: int
    final_activation: str = "none"  # none | tanh

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("all MLP dimensions must be >= 1")
        if self.final_activation not in ("none", "tanh"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")


class ParamSet:
    """Named parameter arrays backed by one flat vector (for Adam and I/O)."""

    def __init__(self, shapes):
        self.names = [n for n, _ in shapes]
        self.shapes = dict(shapes)
        sizes = [int(np.prod(s)) for _, s in shapes]
        total = int(np.sum(sizes))
        self.flat = np.zeros(total)
        self.slices = {}
        off = 0
        for (n, s), sz in zip(shapes, sizes):
            self.slices[n] = slice(off, off + sz)
            off += sz

    @property
    def size(self):
        return self.flat.size

    def view(self, name):
        return self.flat[self.slices[name]].reshape(self.shapes[name])

    def set(self, name, value):
        self.view(name)[...] = value

    def tensors(self):
        """Fresh leaf tensors over the current values (views into flat)."""
        return {n: Tensor(self.view(n), requires_grad=True) for n in self.names}

    def collect_grad(self, tensors):
        g = np.zeros_like(self.flat)
        for n in self.names:
            t = tensors[n]
            if t.grad is not None:
                g[self.slices[n]] = t.grad.ravel()
        return g

    def copy(self):
        out = ParamSet([(n, self.shapes[n]) for n in self.names])
        out.flat[...] = self.flat
        return out


def mlp_shapes(spec: MlpSpec):
    shapes = []
    prev = spec.input_dim
    for i, w in enumerate(spec.hidden):
        shapes += [(f"w{i}", (w, prev)), (f"b{i}", (w,)),
                   (f"ln_g{i}", (w,)), (f"ln_b{i}", (w,))]
        prev = w
    shapes += [("w_out", (spec.output_dim, prev)), ("b_out", (spec.output_dim,))]
    return shapes


def _orthogonal(rng, shape, gain):
    a = rng.normal(size=(max(shape), max(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return gain * q[: shape[0], : shape[1]]


def init_mlp(spec: MlpSpec, rng, out_gain=1.0) -> ParamSet:
    ps = ParamSet(mlp_shapes(spec))
    for i in range(len(spec.hidden)):
        ps.set(f"w{i}", _orthogonal(rng, ps.shapes[f"w{i}"], np.sqrt(2.0)))
        ps.set(f"ln_g{i}", 1.0)
    ps.set("w_out", _orthogonal(rng, ps.shapes["w_out"], out_gain))
    return ps


def layer_norm(x, gain, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / T.sqrt(var + LN_EPS) * gain + offset


def mlp_forward(params: dict, spec: MlpSpec, x: Tensor) -> Tensor:
    """linear -> layernorm -> ELU per hidden layer; linear (+tanh) output."""
    if x.data.shape[-1] != spec.input_dim:
        raise ValueError(f"input dim {x.data.shape[-1]} != {spec.input_dim}")
    h = x
    for i in range(len(spec.hidden)):
        h = T.matmul(h, T.swapaxes(params[f"w{i}"], 0, 1)) + params[f"b{i}"]
        h = layer_norm(h, params[f"ln_g{i}"], params[f"ln_b{i}"])
        h = T.elu(h)
    out = T.matmul(h, T.swapaxes(params["w_out"], 0, 1)) + params["b_out"]
    if spec.final_activation == "tanh":
        out = T.tanh(out)
    return out


# ---------------------------------------------------------------------------
# policy


class Policy:
    """Gaussian policy with reparameterized sampling, tanh-bounded mean.

    The log-std is a learned state-independent vector by default; with
    ``state_dep_std`` the network grows a second output head instead.
    """

    def __init__(self, obs_dim, act_dim, hidden, state_dep_std=False):
        out_dim = act_dim * 2 if state_dep_std else act_dim
        self.spec = MlpSpec(obs_dim, list(hidden), out_dim, final_activation="none")
        self.act_dim = act_dim
        self.state_dep_std = state_dep_std

    def make_params(self, rng) -> ParamSet:
        shapes = mlp_shapes(self.spec)
        if not self.state_dep_std:
            shapes.append(("log_std", (self.act_dim,)))
        ps = ParamSet(shapes)
        tmp = init_mlp(self.spec, rng)
        for n in tmp.names:
            ps.set(n, tmp.view(n))
        if not self.state_dep_std:
            ps.set("log_std", LOG_STD_INIT)
        return ps

    def mean_std(self, params: dict, obs: Tensor):
        out = mlp_forward(params, self.spec, obs)
        if self.state_dep_std:
            mu = T.tanh(out[..., : self.act_dim])
            log_std = T.clip(out[..., self.act_dim:], LOG_STD_MIN, LOG_STD_MAX)
        else:
            mu = T.tanh(out)
            log_std = T.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        return mu, T.exp(log_std)

    def sample(self, params: dict, obs: Tensor, noise) -> Tensor:
        """a = mu(obs) + std * noise; gradients flow through mu and std only."""
        mu, std = self.mean_std(params, obs)
        if noise is None:
            return mu
        return mu + std * np.asarray(noise, dtype=np.float64)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.7
    beta2: float = 0.95
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def _init(self, n):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)

    def update(self, params_flat: np.ndarray, grad: np.ndarray, lr_scale=1.0) -> bool:
        """One Adam step in place.  Returns False (no-op) on non-finite grads."""
        self._init(params_flat.size)
        if not np.isfinite(grad).all():
            return False
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1 ** self.t)
        vh = self.v / (1.0 - self.beta2 ** self.t)
        params_flat -= (self.lr * lr_scale) * mh / (np.sqrt(vh) + self.eps)
        return True


# ---------------------------------------------------------------------------
# observation normalizer


class RunningNormalizer:
    """Per-dimension running mean/variance with stable parallel merging.

    ``apply`` uses the statistics as of the last ``update`` call, so an
    episode's own observations never normalize themselves.
    """

    def __init__(self, dim):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0

    def update(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.size)
        n = batch.shape[0]
        if n == 0:
            return
        bmean = batch.mean(axis=0)
        bvar = batch.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = bmean, bvar, float(n)
            return
        tot = self.count + n
        delta = bmean - self.mean
        m2 = self.var * self.count + bvar * n + delta * delta * self.count * n / tot
        self.mean = self.mean + delta * n / tot
        self.var = m2 / tot
        self.count = tot

    def apply(self, obs):
        """Normalize (Tensor or ndarray) with frozen statistics."""
        if self.count == 0:
            return obs
        std = np.sqrt(self.var + LN_EPS)
        if isinstance(obs, Tensor):
            return (obs - self.mean) * (1.0 / std)
        return (obs - self.mean) / std

    def state(self):
        return {"mean": self.mean.copy(), "var": self.var.copy(), "count": self.count}

    def load(self, st):
        self.mean = np.asarray(st["mean"], dtype=np.float64).copy()
        self.var = np.asarray(st["var"], dtype=np.float64).copy()
        self.count = float(st["count"])
