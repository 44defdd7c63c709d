"""Reverse-mode automatic differentiation on numpy arrays.

Every operation builds a node holding its parents and a closure that maps the
output adjoint to parent adjoints.  Calling ``backward`` on a scalar sweeps the
recorded graph in reverse topological order.  Piecewise operations (clip,
minimum, where, ...) freeze their branch decision at forward time, so the
backward pass is the exact adjoint of the piecewise-smooth function that was
actually evaluated.

All data is float64.  A batch dimension is carried through untouched; ops are
plain numpy broadcasts plus an un-broadcast reduction on the way back.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward evaluation only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjp", "requires_grad")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data, parents, vjp):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    nd = grad.ndim - len(shape)
    if nd > 0:
        grad = grad.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * out / b.data, b.data.shape),
        )

    return _node(out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    a = as_tensor(a)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1),)

    return _node(out, (a,), vjp)


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), vjp)


def take(a, idx):
    a = as_tensor(a)
    out = a.data[idx]
    basic = isinstance(idx, (int, slice)) or idx is Ellipsis or (
        isinstance(idx, tuple)
        and all(isinstance(i, (int, slice)) or i is Ellipsis for i in idx))

    def vjp(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] += g
        else:
            np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _node(out, (a,), vjp)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)

    def vjp(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _node(out, (a,), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(p.squeeze(axis) for p in pieces)

    return _node(out, tuple(tensors), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp)


# --- piecewise ops: branch decisions frozen at forward time ----------------


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data
    out = np.where(mask, a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        )

    return _node(out, (a, b), vjp)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data
    out = np.where(mask, a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        )

    return _node(out, (a, b), vjp)


def clip(a, lo, hi):
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        return (np.where(mask, g, 0.0),)

    return _node(out, (a,), vjp)


def where(mask, a, b):
    """Select by a constant boolean mask; gradients follow the chosen branch."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        )

    return _node(out, (a, b), vjp)


def abs_(a):
    a = as_tensor(a)
    sign = np.where(a.data >= 0.0, 1.0, -1.0)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def elu(a):
    a = as_tensor(a)
    mask = a.data > 0.0
    em1 = np.expm1(a.data)
    out = np.where(mask, a.data, em1)

    def vjp(g):
        return (np.where(mask, g, g * (em1 + 1.0)),)

    return _node(out, (a,), vjp)


# --- linear algebra ---------------------------------------------------------


def _tri_solve(L, b, trans):
    """Batched triangular solve via np.linalg.solve on the triangular factor."""
    mat = np.swapaxes(L, -1, -2) if trans else L
    return np.linalg.solve(mat, b)


def spd_solve(m, b):
    """Solve M x = b for symmetric positive definite M (batched).

    The Cholesky factor is computed once on the forward pass and reused for the
    adjoint solve on the backward pass.  ``m`` has shape (..., d, d), ``b`` has
    shape (..., d).
    """
    m, b = as_tensor(m), as_tensor(b)
    L = np.linalg.cholesky(m.data)
    bb = b.data[..., None]
    x = _tri_solve(L, _tri_solve(L, bb, False), True)[..., 0]

    def vjp(g):
        gb = _tri_solve(L, _tri_solve(L, g[..., None], False), True)
        gm = -gb * x[..., None, :]
        return gm, gb[..., 0]

    out = _node(x, (m, b), vjp)
    return out, L


def cholesky_factor(m):
    """Plain (non-differentiable) Cholesky of a constant SPD matrix."""
    return np.linalg.cholesky(np.asarray(m, dtype=np.float64))


# ---------------------------------------------------------------------------
# backward sweep


def _topo_order(roots):
    order = []
    visited = set()
    stack = [(r, False) for r in roots]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root, seed=None):
    """Propagate adjoints from ``root`` to every reachable leaf.

    Gradients accumulate into ``Tensor.grad``.  ``seed`` defaults to ones of
    the root's shape (the usual scalar-loss case is a () array of 1.0).
    """
    backward_multi([(root, seed)])


def backward_multi(pairs):
    """Backward sweep from several seeded roots over their combined graph."""
    pairs = [(r, s) for r, s in pairs if r.requires_grad]
    if not pairs:
        return
    order = _topo_order([r for r, _ in pairs])
    grads = {}
    for root, seed in pairs:
        g = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)
        rid = id(root)
        grads[rid] = grads[rid] + g if rid in grads else g
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if not p.requires_grad or pg is None:
                continue
            pid = id(p)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
