"""Quantization proxies: straight-through rounding and additive-noise relaxation."""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..errors import NumericError


def quantize_ste(x: dc.Tensor) -> dc.Tensor:
    """Round half-to-even in the forward pass; identity gradient."""
    return dc.round_ste(x)


def quantize_noise(x: dc.Tensor, rng: np.random.Generator) -> dc.Tensor:
    """Additive U(-1/2, 1/2) relaxation of rounding; identity gradient."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("quantize_noise requires finite inputs")
    noise = rng.uniform(-0.5, 0.5, size=x.shape).astype(x.dtype)
    return dc.add(x, dc.Tensor(noise))
