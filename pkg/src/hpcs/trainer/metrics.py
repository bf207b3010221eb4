"""Distortion metrics: PSNR and a differentiable SSIM."""

from __future__ import annotations

import math

import numpy as np

from .. import diffcore as dc
from ..errors import ParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) with peak 1.0; identical images give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gauss_kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _window_matrix(n: int, dtype) -> np.ndarray:
    """(n-10, n) valid-convolution operator for the 1D Gaussian window."""
    g = _gauss_kernel()
    rows = n - SSIM_WINDOW + 1
    mat = np.zeros((rows, n))
    for i in range(rows):
        mat[i, i:i + SSIM_WINDOW] = g
    return mat.astype(dtype)


def ssim(a: dc.Tensor, b: dc.Tensor) -> dc.Tensor:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Accepts (H, W, C) or (H, W) tensors in [0, 1]; differentiable, so it can
    sit inside the distortion loss. Symmetric in its arguments.
    """
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        h, w = a.shape
        channels = 1
    elif a.ndim == 3:
        h, w, channels = a.shape
    else:
        raise ParameterError("ssim expects (H,W) or (H,W,C) images")
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ParameterError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kv = dc.Tensor(_window_matrix(h, a.dtype))
    kh_t = dc.Tensor(_window_matrix(w, a.dtype).T)

    def blur(img2d):
        return dc.matmul(dc.matmul(kv, img2d), kh_t)

    total = None
    for c in range(channels):
        if a.ndim == 2:
            x, y = a, b
        else:
            x = dc.reshape(dc.slice_cols(a, c, c + 1), (h, w))
            y = dc.reshape(dc.slice_cols(b, c, c + 1), (h, w))
        mu_x = blur(x)
        mu_y = blur(y)
        var_x = dc.sub(blur(dc.mul(x, x)), dc.mul(mu_x, mu_x))
        var_y = dc.sub(blur(dc.mul(y, y)), dc.mul(mu_y, mu_y))
        cov = dc.sub(blur(dc.mul(x, y)), dc.mul(mu_x, mu_y))
        num = dc.mul(dc.add(dc.mul(dc.mul(mu_x, mu_y), 2.0), _C1),
                     dc.add(dc.mul(cov, 2.0), _C2))
        den = dc.mul(dc.add(dc.add(dc.mul(mu_x, mu_x), dc.mul(mu_y, mu_y)), _C1),
                     dc.add(dc.add(var_x, var_y), _C2))
        cmean = dc.mean_all(dc.div(num, den))
        total = cmean if total is None else dc.add(total, cmean)
    return dc.mul(total, 1.0 / channels)


def ssim_value(a: np.ndarray, b: np.ndarray) -> float:
    return float(ssim(dc.Tensor(np.asarray(a, dtype=np.float64)),
                      dc.Tensor(np.asarray(b, dtype=np.float64))).data)
