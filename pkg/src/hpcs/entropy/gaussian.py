"""Network-free Gaussian entropy model for quantized parameter tensors.

Symbol probabilities come from a normal distribution convolved with a unit
uniform: pmf(s) = Phi((s + 1/2 - mu)/sigma) - Phi((s - 1/2 - mu)/sigma),
with mu and sigma^2 taken as statistics of the tensor being coded. No
learned parameters, so the decoder reproduces the model from 8 bytes of
side info.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .. import diffcore as dc
from .cdf import P_MIN

VAR_FLOOR = 1e-6
_LN2 = float(np.log(2.0))


@dataclass
class GaussianStatModel:
    mu: float
    var: float

    def __post_init__(self):
        self.mu = float(np.float32(self.mu))
        self.var = float(np.float32(max(self.var, VAR_FLOOR)))


def fit_stats(symbols: np.ndarray) -> GaussianStatModel:
    """Statistics of the exact tensor being coded, stored at float32."""
    s = np.asarray(symbols, dtype=np.float64).reshape(-1)
    if s.size == 0:
        return GaussianStatModel(0.0, VAR_FLOOR)
    return GaussianStatModel(float(s.mean()), float(s.var()))


def gaussian_pmf(stats: GaussianStatModel, symbols: np.ndarray) -> np.ndarray:
    sigma = np.sqrt(stats.var)
    s = np.asarray(symbols, dtype=np.float64)
    upper = ndtr((s + 0.5 - stats.mu) / sigma)
    lower = ndtr((s - 0.5 - stats.mu) / sigma)
    return np.maximum(upper - lower, P_MIN)


def gaussian_bits(stats: GaussianStatModel, symbols: np.ndarray) -> tuple[float, np.ndarray]:
    """Codelength of integer symbols under the fitted model."""
    pmf = gaussian_pmf(stats, symbols)
    return float(np.sum(-np.log2(pmf))), pmf


def gaussian_pmf_table(stats: GaussianStatModel, s_min: int, s_max: int) -> np.ndarray:
    return gaussian_pmf(stats, np.arange(s_min, s_max + 1))


def gaussian_bits_train(symbols: dc.Tensor) -> dc.Tensor:
    """Differentiable codelength with statistics taken from the input itself.

    ``symbols`` is a noisy-proxy tensor of any shape; gradients flow both
    through the symbols and through the mean/variance statistics. Fused into
    a single graph node (the statistics chain makes the composed form ~14
    nodes per call, and this sits inside the per-layer training loop).
    """
    from ..diffcore.tensor import make_result

    x = symbols.data.reshape(-1)
    n = x.size
    mu = x.mean()
    c = x - mu
    v = float(np.mean(c * c))
    clamped = max(v, VAR_FLOOR)
    sigma = np.sqrt(clamped)
    zh = (c + 0.5) / sigma
    zl = (c - 0.5) / sigma
    raw = ndtr(zh) - ndtr(zl)
    pmf = np.maximum(raw, P_MIN)
    bits = np.asarray(np.sum(-np.log(pmf)) / _LN2, dtype=symbols.dtype)

    def backward(g):
        if not symbols.requires_grad:
            return
        scale = float(g) / _LN2
        dp = np.where(raw > P_MIN, -scale / pmf, 0.0)
        inv_sqrt_2pi = 1.0 / np.sqrt(2.0 * np.pi)
        gh = dp * inv_sqrt_2pi * np.exp(-0.5 * zh * zh)
        gl = -dp * inv_sqrt_2pi * np.exp(-0.5 * zl * zl)
        direct = (gh + gl) / sigma
        dsigma = -(np.dot(gh, zh) + np.dot(gl, zl)) / sigma
        dv = dsigma / (2.0 * sigma) if v > VAR_FLOOR else 0.0
        d = direct + dv * (2.0 / n) * c
        grad = d - d.mean()
        symbols.accumulate_grad(grad.reshape(symbols.shape).astype(symbols.dtype))

    return make_result(bits, (symbols,), backward, "gaussian_rate")
