"""Differentiable operations over Tensor.

All ops are first-order only. Binary elementwise ops accept python scalars
or equal-rank arrays whose mismatched axes are singletons (no rank
promotion). Gradients for broadcast axes are reduced by summation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from ..errors import NumericError, ShapeError
from .tensor import Tensor, make_result

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# -- broadcasting helpers -------------------------------------------------


def _check_broadcast(sa, sb):
    if len(sa) != len(sb):
        raise ShapeError(f"rank mismatch {sa} vs {sb} (no rank promotion)")
    for da, db in zip(sa, sb):
        if da != db and 1 not in (da, db):
            raise ShapeError(f"incompatible shapes {sa} vs {sb}")


def _reduce_to(grad, shape):
    """Sum grad over axes that were broadcast from singletons."""
    if grad.shape == tuple(shape):
        return grad
    axes = tuple(i for i, (d, g) in enumerate(zip(shape, grad.shape)) if d == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _binary(a, b, fwd, bwd_a, bwd_b, op):
    """Common driver for elementwise binary ops. b may be a python scalar."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one Tensor operand required")
    scalar_a = not isinstance(a, Tensor)
    scalar_b = not isinstance(b, Tensor)
    if scalar_a:
        av, bvt = float(a), b
        data = fwd(av, bvt.data)
        parents = (bvt,)

        def backward(g):
            if bvt.requires_grad:
                bvt.accumulate_grad(_reduce_to(bwd_b(g, av, bvt.data, data), bvt.shape))

        return make_result(data, parents, backward, op)
    if scalar_b:
        bv = float(b)
        data = fwd(a.data, bv)
        parents = (a,)

        def backward(g):
            if a.requires_grad:
                a.accumulate_grad(_reduce_to(bwd_a(g, a.data, bv, data), a.shape))

        return make_result(data, parents, backward, op)

    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch {a.dtype} vs {b.dtype}")
    _check_broadcast(a.shape, b.shape)
    data = fwd(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_reduce_to(bwd_a(g, a.data, b.data, data), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_reduce_to(bwd_b(g, a.data, b.data, data), b.shape))

    return make_result(data, (a, b), backward, op)


# -- elementwise binary ---------------------------------------------------


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g, "add")


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g, "sub")


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x, "mul")


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y), "div")


# -- elementwise unary ----------------------------------------------------


def _unary(a, fwd, bwd, op):
    data = fwd(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(bwd(g, a.data, data))

    return make_result(data, (a,), backward, op)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, o: g * (x > 0), "relu")


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o, "exp")


def log(a):
    if np.any(a.data <= 0):
        idx = np.unravel_index(int(np.argmax(a.data <= 0)), a.shape)
        raise NumericError(f"log domain violation at index {idx}")
    return _unary(a, np.log, lambda g, x, o: g / x, "log")


def sigmoid(a):
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _unary(a, fwd, lambda g, x, o: g * o * (1.0 - o), "sigmoid")


def softplus(a):
    # log(1 + e^x) computed stably as max(x,0) + log1p(e^{-|x|})
    def fwd(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g, x, o):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        s[~pos] = e / (1.0 + e)
        return g * s

    return _unary(a, fwd, bwd, "softplus")


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o), "tanh")


def sqrt(a):
    return _unary(a, np.sqrt, lambda g, x, o: g * 0.5 / o, "sqrt")


def absval(a):
    return _unary(a, np.abs, lambda g, x, o: g * np.sign(x), "abs")


def gauss_cdf(a):
    """Standard normal CDF; gradient is the normal pdf."""
    return _unary(a, lambda x: ndtr(x),
                  lambda g, x, o: g * _INV_SQRT_2PI * np.exp(-0.5 * x * x),
                  "gauss_cdf")


def clamp(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    def bwd(g, x, o):
        return g * ((x > lo) & (x < hi))

    return _unary(a, lambda x: np.clip(x, lo, hi), bwd, "clamp")


def clamp_min(a, lo):
    return _unary(a, lambda x: np.maximum(x, lo),
                  lambda g, x, o: g * (x > lo), "clamp_min")


def stop_gradient(a):
    return Tensor(a.data.copy(), requires_grad=False)


def round_ste(a):
    """Round half-to-even forward, identity gradient (straight-through)."""
    if not np.all(np.isfinite(a.data)):
        raise NumericError("round_ste requires finite inputs")
    return _unary(a, np.rint, lambda g, x, o: g, "round_ste")


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return make_result(data, (a, b), backward, "matmul")


def bmm(a, b):
    """Batched matmul over matching leading batch dims: (B,m,k) @ (B,k,n)."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"bmm expects 3D operands, got {a.shape} @ {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b.accumulate_grad(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return make_result(data, (a, b), backward, "bmm")


def transpose2(a):
    if a.ndim != 2:
        raise ShapeError("transpose2 expects a 2D tensor")
    return _view_op(a, a.data.T, lambda g: g.T, "transpose2")


def swap_last2(a):
    if a.ndim < 2:
        raise ShapeError("swap_last2 needs rank >= 2")
    return _view_op(a, np.swapaxes(a.data, -1, -2),
                    lambda g: np.swapaxes(g, -1, -2), "swap_last2")


def _view_op(a, data, grad_map, op):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(grad_map(g))

    return make_result(np.ascontiguousarray(data), (a,), backward, op)


def reshape(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _view_op(a, a.data.reshape(shape),
                    lambda g: g.reshape(a.shape), "reshape")


def concat(tensors, axis):
    if not tensors:
        raise ShapeError("concat of nothing")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return make_result(data, tuple(tensors), backward, "concat")


def slice_cols(a, start, stop):
    """Contiguous slice along the last axis."""
    data = np.ascontiguousarray(a.data[..., start:stop])

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            a.accumulate_grad(full)

    return make_result(data, (a,), backward, "slice_cols")


# -- reductions / structure ----------------------------------------------


def rsum(a, axis, keepdims=True):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return make_result(data, (a,), backward, "rsum")


def sum_all(a):
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full(a.shape, g, dtype=a.dtype))

    return make_result(data, (a,), backward, "sum_all")


def mean_all(a):
    return mul(sum_all(a), 1.0 / a.size)


def softmax(a, axis=-1):
    """Max-subtracted softmax; rows along ``axis`` sum to 1."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(data * (g - dot))

    return make_result(data, (a,), backward, "softmax")


def gather_concat(rows, index, extra=None):
    """out[i] = rows[index[i]] (++ extra[i]); scatter-add backward into rows."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("index must be 1D")
    n = rows.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather index out of range [0, {n})")
    gathered = rows.data[index]
    if extra is not None:
        if extra.shape[0] != index.shape[0]:
            raise ShapeError("extra row count must match index length")
        if extra.dtype != rows.dtype:
            raise ShapeError("dtype mismatch between rows and extra")
        data = np.concatenate([gathered, extra.data], axis=1)
        parents = (rows, extra)
    else:
        data = gathered
        parents = (rows,)
    c = rows.shape[1]

    def backward(g):
        if rows.requires_grad:
            dr = np.zeros_like(rows.data)
            np.add.at(dr, index, g[:, :c])
            rows.accumulate_grad(dr)
        if extra is not None and extra.requires_grad:
            extra.accumulate_grad(g[:, c:].copy())

    return make_result(data, parents, backward, "gather_concat")


def take_rows(rows, index):
    return gather_concat(rows, index, None)


def segsum_rows(a, k):
    """(n*k, c) -> (n, c): sum over consecutive groups of k rows."""
    nk, c = a.shape
    if nk % k:
        raise ShapeError(f"row count {nk} not divisible by k={k}")
    n = nk // k
    data = a.data.reshape(n, k, c).sum(axis=1)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.repeat(g, k, axis=0))

    return make_result(data, (a,), backward, "segsum_rows")


def cumsum_exclusive(a, axis=-1):
    """y_i = sum_{j<i} x_j along axis; backward is the reversed analogue."""
    data = np.cumsum(a.data, axis=axis)
    data = np.roll(data, 1, axis=axis)
    sl = [slice(None)] * a.ndim
    sl[axis] = 0
    data[tuple(sl)] = 0.0

    def backward(g):
        if a.requires_grad:
            rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            rev = np.roll(rev, -1, axis=axis)
            sl2 = [slice(None)] * a.ndim
            sl2[axis] = -1
            rev[tuple(sl2)] = 0.0
            a.accumulate_grad(rev)

    return make_result(data, (a,), backward, "cumsum_exclusive")


def splat_alpha(mu_u, mu_v, inv_a, inv_b, inv_c, alpha, grid_u, grid_v):
    """Opacity-weighted anisotropic 2D Gaussian footprints, fused.

    Inputs are per-splat columns (N,1): projected centers, the upper-triangle
    entries of the inverse 2D covariance, and opacity. ``grid_u``/``grid_v``
    are constant (P,1) pixel coordinates. Returns (P,N) with
    out[p,n] = alpha_n * exp(-0.5 * d^T A_n d), d = pixel_p - center_n.
    Fusing keeps one (P,N) buffer live instead of ~10.
    """
    for t in (mu_u, mu_v, inv_a, inv_b, inv_c, alpha):
        if t.ndim != 2 or t.shape[1] != 1:
            raise ShapeError("splat_alpha expects (N,1) per-splat columns")
    du = grid_u - mu_u.data.T  # (P,N)
    dv = grid_v - mu_v.data.T
    q = inv_a.data.T * du * du + 2.0 * inv_b.data.T * du * dv + inv_c.data.T * dv * dv
    g_foot = np.exp(-0.5 * q)
    data = alpha.data.T * g_foot
    del du, dv, q

    def backward(g):
        du_ = grid_u - mu_u.data.T
        dv_ = grid_v - mu_v.data.T
        if alpha.requires_grad:
            alpha.accumulate_grad(
                np.einsum("pn,pn->n", g, g_foot)[:, None])
        dq = -0.5 * g_foot * (g * alpha.data.T)
        if inv_a.requires_grad:
            inv_a.accumulate_grad(
                np.einsum("pn,pn,pn->n", dq, du_, du_)[:, None])
        if inv_b.requires_grad:
            inv_b.accumulate_grad(
                2.0 * np.einsum("pn,pn,pn->n", dq, du_, dv_)[:, None])
        if inv_c.requires_grad:
            inv_c.accumulate_grad(
                np.einsum("pn,pn,pn->n", dq, dv_, dv_)[:, None])
        if mu_u.requires_grad or mu_v.requires_grad:
            qu = np.einsum("pn,pn->n", dq, du_)
            qv = np.einsum("pn,pn->n", dq, dv_)
            ia = inv_a.data[:, 0]
            ib = inv_b.data[:, 0]
            ic = inv_c.data[:, 0]
            if mu_u.requires_grad:
                mu_u.accumulate_grad((-2.0 * (ia * qu + ib * qv))[:, None])
            if mu_v.requires_grad:
                mu_v.accumulate_grad((-2.0 * (ic * qv + ib * qu))[:, None])

    return make_result(data, (mu_u, mu_v, inv_a, inv_b, inv_c, alpha),
                       backward, "splat_alpha")
