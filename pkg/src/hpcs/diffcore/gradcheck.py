"""Central finite-difference verification for differentiable ops."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_grad(fn, inputs, wrt, h=1e-6):
    """Central-difference gradient of scalar ``fn(*inputs)`` w.r.t. inputs[wrt].

    ``fn`` must rebuild its graph from fresh Tensors on each call and return
    a scalar Tensor. Inputs are numpy arrays.
    """
    base = [np.array(x, dtype=np.float64) for x in inputs]
    target = base[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(fn(*[Tensor(x.copy()) for x in base]).data)
        flat[i] = orig - h
        lo = float(fn(*[Tensor(x.copy()) for x in base]).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def analytic_grads(fn, inputs):
    """Backprop gradients of scalar ``fn(*inputs)`` for every input."""
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    out.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(analytic, numeric):
    """max |a - n| scaled by the larger of 1 and the numeric magnitude."""
    diff = np.max(np.abs(analytic - numeric))
    scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 1.0)
    return diff / scale


def check_grads(fn, inputs, tol=1e-4, h=1e-6):
    """Assert analytic == finite-difference gradients for all inputs.

    Returns the worst relative error observed (useful for reporting).
    """
    analytic = analytic_grads(fn, inputs)
    worst = 0.0
    for i in range(len(inputs)):
        numeric = finite_difference_grad(fn, inputs, i, h=h)
        err = relative_error(analytic[i], numeric)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient mismatch on input {i}: rel err {err:.3e} > {tol:.1e}")
    return worst
