"""Minimal reverse-mode differentiation on numpy arrays.

Only the handful of primitives the losses and the toy trainer need are
provided. Every :class:`Var` belongs to a :class:`Tape`; operations append a
node holding its value and a vector-Jacobian product. ``backward`` walks the
tape in reverse.

    tape = Tape()
    x = tape.var(3.0)
    grads = backward(tape, x * x)
    grads[x]  # 6.0
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NearDegenerateSVD, ShapeError

ARCCOS_GRAD_CLAMP = 1e-7
SVD_GAP = 1e-6


class Var:
    __slots__ = ("value", "tape", "index", "parents", "vjp", "op")
    __array_priority__ = 100  # so ndarray @ Var dispatches to Var.__rmatmul__

    def __init__(self, tape, value, parents=(), vjp=None, op="leaf"):
        self.value = value
        self.tape = tape
        self.parents = tuple(parents)
        self.vjp = vjp
        self.op = op
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Ordered record of primitive ops; nodes are appended in evaluation order."""

    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value) -> Var:
        return Var(self, np.array(value, dtype=float))

    def __len__(self):
        return len(self.nodes)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _record(op, value, inputs, grad_fns):
    """Record ``value`` with per-input gradient functions; constants are dropped.

    With no Var among ``inputs`` the plain array is returned, so every
    primitive also works as an ordinary numpy function.
    """
    if not any(isinstance(x, Var) for x in inputs):
        return np.asarray(value, dtype=float)
    tape = _tape_of(*inputs)
    parents, fns = [], []
    for x, fn in zip(inputs, grad_fns):
        if isinstance(x, Var):
            parents.append(x)
            fns.append((fn, x.shape))

    def vjp(g):
        return [_unbroadcast(fn(g), shape) for fn, shape in fns]

    return Var(tape, np.asarray(value, dtype=float), parents, vjp, op)


def add(a, b):
    return _record("add", _val(a) + _val(b), (a, b), (lambda g: g, lambda g: g))


def sub(a, b):
    return _record("sub", _val(a) - _val(b), (a, b), (lambda g: g, lambda g: -g))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _record("mul", av * bv, (a, b), (lambda g: g * bv, lambda g: g * av))


def scale(a, c: float):
    return _record("scale", _val(a) * c, (a,), (lambda g: g * c,))


def div(a, b):
    av, bv = _val(a), _val(b)
    return _record("div", av / bv, (a, b), (lambda g: g / bv, lambda g: -g * av / (bv * bv)))


def matmul(a, b):
    av, bv = _val(a), _val(b)

    def ga(g):
        if bv.ndim == 1:
            return g[..., None] * bv
        if av.ndim == 1:
            return (bv @ g[..., None])[..., 0]
        return g @ np.swapaxes(bv, -1, -2)

    def gb(g):
        if bv.ndim == 1:
            return (g[..., None] * av).reshape(-1, bv.shape[0]).sum(axis=0)
        if av.ndim == 1:
            return av[:, None] * g[..., None, :]
        return np.swapaxes(av, -1, -2) @ g

    return _record("matmul", av @ bv, (a, b), (ga, gb))


def transpose(a):
    return _record("transpose", np.swapaxes(_val(a), -1, -2), (a,), (lambda g: np.swapaxes(g, -1, -2),))


def trace(a):
    """Trace over the last two axes."""
    av = _val(a)
    eye = np.eye(av.shape[-1])
    return _record("trace", np.trace(av, axis1=-2, axis2=-1), (a,), (lambda g: g[..., None, None] * eye,))


def vsum(a, axis=None, keepdims=False):
    av = _val(a)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _record("sum", av.sum(axis=axis, keepdims=keepdims), (a,), (grad,))


def mean(a, axis=None, keepdims=False):
    av = _val(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return scale(vsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    av = _val(a)
    return _record("reshape", av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def getitem(a, idx):
    av = _val(a)

    def grad(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _record("getitem", av[idx], (a,), (grad,))


def stack(xs: Sequence, axis=0):
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=axis)
    fns = [(lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(xs))]
    return _record("stack", out, xs, fns)


def concat(xs: Sequence, axis=-1):
    vals = [_val(x) for x in xs]
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    fns = [
        (lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis))
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    return _record("concat", np.concatenate(vals, axis=axis), xs, fns)


def _unary(op, f, df):
    def apply(a):
        av = _val(a)
        return _record(op, f(av), (a,), (lambda g: g * df(av),))

    apply.__name__ = op
    return apply


sqrt = _unary("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x))
exp = _unary("exp", np.exp, np.exp)
sin = _unary("sin", np.sin, np.cos)
cos = _unary("cos", np.cos, lambda x: -np.sin(x))
arctan = _unary("arctan", np.arctan, lambda x: 1.0 / (1.0 + x * x))
tanh = _unary("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


sigmoid = _unary("sigmoid", _sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)))


def maximum(a, b):
    av, bv = np.broadcast_arrays(_val(a), _val(b))
    pick_a = av >= bv
    return _record("maximum", np.where(pick_a, av, bv), (a, b), (lambda g: g * pick_a, lambda g: g * ~pick_a))


def minimum(a, b):
    av, bv = np.broadcast_arrays(_val(a), _val(b))
    pick_a = av <= bv
    return _record("minimum", np.where(pick_a, av, bv), (a, b), (lambda g: g * pick_a, lambda g: g * ~pick_a))


def arccos_clamped(a):
    """arccos with the argument clipped to [-1, 1].

    The derivative is evaluated at the argument clipped to
    ``[-1 + 1e-7, 1 - 1e-7]`` so it stays bounded, and is zero where
    ``|x| >= 1`` (perfect or opposite alignment).
    """
    av = _val(a)
    xc = np.clip(av, -1.0 + ARCCOS_GRAD_CLAMP, 1.0 - ARCCOS_GRAD_CLAMP)
    d = np.where(np.abs(av) >= 1.0, 0.0, -1.0 / np.sqrt(1.0 - xc * xc))
    return _record("arccos", np.arccos(np.clip(av, -1.0, 1.0)), (a,), (lambda g: g * d,))


def smooth_l1(pred, target, beta: float = 1.0):
    """Elementwise smooth L1; at ``|d| == beta`` both branches give slope ``sign(d)``."""
    d = _val(pred) - _val(target)
    ad = np.abs(d)
    quad = ad < beta
    value = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    slope = np.where(quad, d / beta, np.sign(d))
    return _record("smooth_l1", value, (pred, target), (lambda g: g * slope, lambda g: -g * slope))


def l2_distance(a, b):
    """Euclidean distance over the last axis; subgradient 0 at coincident points."""
    d = _val(a) - _val(b)
    n = np.sqrt((d * d).sum(axis=-1))
    safe = np.where(n > 0, n, 1.0)
    unit = np.where((n > 0)[..., None], d / safe[..., None], 0.0)
    return _record("l2_distance", n, (a, b), (lambda g: g[..., None] * unit, lambda g: -g[..., None] * unit))


# ---------------------------------------------------------------- SVD projection


def _signed_svd(m):
    u, s, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    v = np.swapaxes(vt, -1, -2).copy()
    v[..., :, 2] *= d[..., None]
    s = s.copy()
    s[..., 2] *= d
    return u, s, v


def svd_gap_ok(m, gap: float = SVD_GAP) -> np.ndarray:
    """Per-matrix mask: all pairwise signed singular-value sums exceed ``gap``."""
    _, s, _ = _signed_svd(np.asarray(m, dtype=float))
    sums = s[..., :, None] + s[..., None, :]
    off = ~np.eye(3, dtype=bool)
    return np.all(np.abs(sums[..., off]) > gap, axis=-1)


def svd_project_backward(m, upstream) -> np.ndarray:
    """Gradient w.r.t. ``m`` of ``<upstream, svd_project_so3(m)>``.

    With the signed factorisation ``m = U S' V'^T`` (last singular pair flipped
    when ``det(U V^T) < 0``) the projection is ``R = U V'^T`` and
    ``dR = U Omega V'^T`` with ``Omega_ij = (X_ij - X_ji) / (s'_i + s'_j)``,
    ``X = U^T dM V'``. Only the signed sums enter as denominators, so equal
    singular values (e.g. ``m`` already a rotation) are fine; a near-zero sum
    raises :class:`NearDegenerateSVD`.
    """
    m = np.asarray(m, dtype=float)
    g = np.asarray(upstream, dtype=float)
    u, s, v = _signed_svd(m)
    sums = s[..., :, None] + s[..., None, :]
    off = ~np.eye(3, dtype=bool)
    if np.any(np.abs(sums[..., off]) <= SVD_GAP):
        raise NearDegenerateSVD(f"signed singular values {s} have a pairwise sum below {SVD_GAP}")
    k = np.where(off, 1.0 / np.where(off, sums, 1.0), 0.0)
    gt = np.swapaxes(u, -1, -2) @ g @ v
    inner = k * (gt - np.swapaxes(gt, -1, -2))
    return u @ inner @ np.swapaxes(v, -1, -2)


def svd_project(a):
    """Differentiable nearest-rotation projection of ``(..., 3, 3)`` matrices."""
    av = _val(a)
    if not np.all(svd_gap_ok(av)):
        raise NearDegenerateSVD("matrix too close to a degenerate SVD for differentiation")
    u, _, v = _signed_svd(av)
    r = u @ np.swapaxes(v, -1, -2)
    return _record("svd_project", r, (a,), (lambda g: svd_project_backward(av, g),))


# ---------------------------------------------------------------- backward


def backward(tape: Tape, output: Var) -> dict:
    """Gradients of a scalar ``output`` w.r.t. every leaf on ``tape``.

    Returns ``{leaf: grad}``; leaves the output does not depend on get zeros.
    """
    if output.tape is not tape:
        raise ShapeError("output does not belong to this tape")
    if output.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[output.index] = np.ones_like(output.value)
    for node in reversed(tape.nodes[: output.index + 1]):
        g = grads[node.index]
        if g is None or node.is_leaf:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if grads[parent.index] is None:
                grads[parent.index] = pg
            else:
                grads[parent.index] = grads[parent.index] + pg
    return {
        n: (grads[n.index] if grads[n.index] is not None else np.zeros_like(n.value))
        for n in tape.nodes
        if n.is_leaf
    }


def value_and_grad(fn: Callable, *args):
    """Evaluate ``fn`` on fresh leaves built from ``args``; return ``(value, [grads])``."""
    tape = Tape()
    leaves = [tape.var(a) for a in args]
    out = fn(*leaves)
    grads = backward(tape, out)
    return float(out.value), [grads[x] for x in leaves]


# ---------------------------------------------------------------- gradient checking


def central_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(1e-8, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class GradCheckReport:
    op: str
    max_rel_err: float
    trials: int
    seed: int

    def row(self):
        return [self.op, f"{self.max_rel_err:.3e}", self.trials, self.seed]


def write_reports_csv(reports: Sequence[GradCheckReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["op", "max_rel_err", "trials", "seed"])
    for r in reports:
        w.writerow(r.row())
