"""Network stack: MLP gradients, policy reparameterization, Adam, and the
running observation normalizer."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import shacsim.tape as T
from shacsim.tape import Tensor
from shacsim.nn import (AdamState, MlpSpec, ParamSet, Policy,
                        RunningNormalizer, init_mlp, mlp_forward, mlp_shapes)


def test_spec_rejects_bad_dims():
    with pytest.raises(ValueError):
        MlpSpec(0, [4], 1)
    with pytest.raises(ValueError):
        MlpSpec(2, [4, 0], 1)
    with pytest.raises(ValueError):
        MlpSpec(2, [4], 1, final_activation="relu")


def test_zero_params_give_zero_output():
    spec = MlpSpec(3, [4, 4], 2)
    ps = ParamSet(mlp_shapes(spec))  # all zeros
    out = mlp_forward(ps.tensors(), spec, Tensor(np.random.default_rng(0).normal(size=(5, 3))))
    assert np.allclose(out.data, 0.0)


def test_elu_values():
    x = Tensor(np.array([0.0, 1.0, -1.0]))
    y = T.elu(x)
    assert np.allclose(y.data, [0.0, 1.0, np.exp(-1) - 1.0])


def test_layernorm_removes_constant():
    from shacsim.nn import layer_norm
    x = Tensor(np.full((2, 6), 3.7))
    y = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    assert np.allclose(y.data, 0.0)


def test_mlp_dimension_mismatch_rejected():
    spec = MlpSpec(3, [4], 2)
    ps = init_mlp(spec, np.random.default_rng(0))
    with pytest.raises(ValueError, match="input dim"):
        mlp_forward(ps.tensors(), spec, Tensor(np.zeros((2, 5))))


@pytest.mark.parametrize("final", ["none", "tanh"])
def test_mlp_gradients_match_fd(final):
    rng = np.random.default_rng(1)
    spec = MlpSpec(4, [8, 6], 3, final_activation=final)
    ps = init_mlp(spec, rng)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))

    def loss_of(flat):
        ps.flat[...] = flat
        with T.no_grad():
            out = mlp_forward({n: Tensor(ps.view(n)) for n in ps.names}, spec, Tensor(x))
        return float((out.data * w).sum())

    pt = ps.tensors()
    out = mlp_forward(pt, spec, Tensor(x))
    T.backward(T.tsum(out * w))
    grad = ps.collect_grad(pt)

    base = ps.flat.copy()
    rng2 = np.random.default_rng(2)
    idx = rng2.choice(base.size, size=40, replace=False)
    eps = 1e-6
    for k in idx:
        p = base.copy()
        p[k] += eps
        hi = loss_of(p)
        p[k] -= 2 * eps
        lo = loss_of(p)
        fd = (hi - lo) / (2 * eps)
        assert np.isclose(grad[k], fd, rtol=1e-5, atol=1e-8), k
    ps.flat[...] = base


def test_policy_zero_noise_returns_mean():
    pol = Policy(4, 2, [8])
    ps = pol.make_params(np.random.default_rng(0))
    obs = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
    a0 = pol.sample(ps.tensors(), obs, np.zeros((3, 2)))
    mu = pol.sample(ps.tensors(), obs, None)
    assert np.allclose(a0.data, mu.data)
    assert np.all(np.abs(mu.data) <= 1.0)  # tanh-bounded mean


def test_policy_noise_jacobian_is_std():
    pol = Policy(3, 2, [6])
    ps = pol.make_params(np.random.default_rng(0))
    ps.set("log_std", [0.3, -0.7])
    obs = np.random.default_rng(1).normal(size=(1, 3))
    eps = 1e-6
    for k in range(2):
        d = np.zeros((1, 2))
        d[0, k] = eps
        hi = pol.sample(ps.tensors(), Tensor(obs), d).data
        lo = pol.sample(ps.tensors(), Tensor(obs), -d).data
        j = (hi - lo)[0, k] / (2 * eps)
        assert np.isclose(j, np.exp(ps.view("log_std")[k]), rtol=1e-8)


def test_policy_state_dependent_std_head():
    pol = Policy(3, 2, [6], state_dep_std=True)
    ps = pol.make_params(np.random.default_rng(0))
    obs = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
    mu, std = pol.mean_std(ps.tensors(), obs)
    assert mu.data.shape == (4, 2) and std.data.shape == (4, 2)
    assert np.all(std.data > 0)


def test_policy_sample_deterministic_function():
    pol = Policy(3, 1, [6])
    ps = pol.make_params(np.random.default_rng(0))
    obs = np.random.default_rng(1).normal(size=(2, 3))
    noise = np.random.default_rng(2).normal(size=(2, 1))
    a1 = pol.sample(ps.tensors(), Tensor(obs), noise).data
    a2 = pol.sample(ps.tensors(), Tensor(obs), noise).data
    assert np.array_equal(a1, a2)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grad_is_fixed_point():
    adam = AdamState(lr=0.1)
    p = np.ones(4)
    adam.update(p, np.zeros(4))
    assert np.array_equal(p, np.ones(4))


def test_adam_first_step_magnitude():
    adam = AdamState(lr=0.05, beta1=0.9, beta2=0.999)
    p = np.zeros(1)
    adam.update(p, np.array([3.0]))
    # bias-corrected first step: lr * g / (|g| + eps) ~= lr, direction -sign(g)
    assert np.isclose(p[0], -0.05, rtol=1e-6)
    assert adam.t == 1


def test_adam_degenerate_betas():
    adam = AdamState(lr=0.1, beta1=0.0, beta2=0.0)
    p = np.zeros(1)
    g = np.array([-2.0])
    adam.update(p, g)
    assert np.isclose(p[0], 0.1 * 2.0 / (2.0 + adam.eps))


def test_adam_skips_nonfinite():
    adam = AdamState(lr=0.1)
    p = np.ones(3)
    ok = adam.update(p, np.array([1.0, np.nan, 0.0]))
    assert not ok and np.array_equal(p, np.ones(3)) and adam.t == 0


def test_adam_permutation_invariance():
    rng = np.random.default_rng(0)
    p = rng.normal(size=6)
    perm = rng.permutation(6)
    a1, a2 = AdamState(lr=0.01), AdamState(lr=0.01)
    p1, p2 = p.copy(), p[perm].copy()
    for _ in range(5):
        g = rng.normal(size=6)
        a1.update(p1, g)
        a2.update(p2, g[perm])
    assert np.allclose(p1[perm], p2, atol=1e-15)


def test_adam_lr_scale():
    a1, a2 = AdamState(lr=0.1), AdamState(lr=0.05)
    p1, p2 = np.zeros(2), np.zeros(2)
    g = np.array([1.0, -2.0])
    a1.update(p1, g, lr_scale=0.5)
    a2.update(p2, g, lr_scale=1.0)
    assert np.allclose(p1, p2)


# ---------------------------------------------------------------------------
# running normalizer


def test_normalizer_identity_when_empty():
    norm = RunningNormalizer(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(norm.apply(x), x)


def test_normalizer_simple_statistics():
    norm = RunningNormalizer(1)
    norm.update(np.array([[0.0], [2.0]]))
    assert np.isclose(norm.mean[0], 1.0) and np.isclose(norm.var[0], 1.0)
    assert abs(norm.apply(np.array([[1.0]]))[0, 0]) < 1e-12


def test_normalizer_merge_order_independent():
    rng = np.random.default_rng(3)
    a, b, c = (rng.normal(size=(n, 2)) * s for n, s in [(10, 1), (25, 3), (7, 0.2)])
    n1 = RunningNormalizer(2)
    for batch in (a, b, c):
        n1.update(batch)
    n2 = RunningNormalizer(2)
    n2.update(np.concatenate([a, b, c]))
    assert np.allclose(n1.mean, n2.mean, atol=1e-10)
    assert np.allclose(n1.var, n2.var, atol=1e-10)


def test_normalizer_apply_is_frozen_tensor_expression():
    norm = RunningNormalizer(2)
    norm.update(np.random.default_rng(0).normal(size=(50, 2)) * 3 + 1)
    x = Tensor(np.ones((4, 2)), requires_grad=True)
    y = norm.apply(x)
    T.backward(T.tsum(y))
    assert np.allclose(x.grad, 1.0 / np.sqrt(norm.var + 1e-5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 50), st.integers(1, 50))
def test_normalizer_matches_numpy_property(seed, n1, n2):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n1, 3)), rng.normal(size=(n2, 3)) * 2 + 1
    norm = RunningNormalizer(3)
    norm.update(a)
    norm.update(b)
    allx = np.concatenate([a, b])
    assert np.allclose(norm.mean, allx.mean(axis=0), atol=1e-10)
    assert np.allclose(norm.var, allx.var(axis=0), atol=1e-10)
