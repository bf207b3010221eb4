"""Learned factorized entropy model for quantized latent embeddings.

One monotone CDF approximator per latent channel: a chain of three width-3
layers plus input/output maps. Matrices pass through softplus (non-negative)
and gates through tanh, keeping the CDF non-decreasing and bounded, so
integer-bin differences are valid symbol probabilities.
"""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..errors import NumericError, ShapeError
from .cdf import P_MIN

FILTERS = (3, 3, 3)
_INIT_SCALE = 10.0
_LN2 = float(np.log(2.0))


def _filter_dims():
    return (1,) + FILTERS + (1,)


class FactorizedModel:
    """Per-channel CDF chains over a latent tensor with ``channels`` columns."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        self.channels = channels
        dims = _filter_dims()
        scale = _INIT_SCALE ** (1.0 / (len(FILTERS) + 1))
        self.matrices: list[dc.Tensor] = []
        self.biases: list[dc.Tensor] = []
        self.factors: list[dc.Tensor] = []
        rng = rng or np.random.default_rng(0)
        for i in range(len(FILTERS) + 1):
            init = float(np.log(np.expm1(1.0 / scale / dims[i + 1])))
            m = np.full((channels, dims[i + 1], dims[i]), init, dtype=np.float64)
            b = rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1))
            self.matrices.append(dc.Tensor(m, requires_grad=True))
            self.biases.append(dc.Tensor(b, requires_grad=True))
            if i < len(FILTERS):
                f = np.zeros((channels, dims[i + 1], 1), dtype=np.float64)
                self.factors.append(dc.Tensor(f, requires_grad=True))

    # -- parameter plumbing -------------------------------------------------

    def param_tensors(self) -> list[dc.Tensor]:
        """All learnable tensors in a fixed serialization order."""
        out = []
        for i in range(len(FILTERS) + 1):
            out.append(self.matrices[i])
            out.append(self.biases[i])
            if i < len(FILTERS):
                out.append(self.factors[i])
        return out

    @classmethod
    def param_shapes(cls, channels: int) -> list[tuple[int, ...]]:
        dims = _filter_dims()
        shapes = []
        for i in range(len(FILTERS) + 1):
            shapes.append((channels, dims[i + 1], dims[i]))
            shapes.append((channels, dims[i + 1], 1))
            if i < len(FILTERS):
                shapes.append((channels, dims[i + 1], 1))
        return shapes

    # -- differentiable path ------------------------------------------------

    def _logits(self, x: dc.Tensor) -> dc.Tensor:
        """Monotone chain on (C, 1, m) inputs."""
        h = x
        for i in range(len(FILTERS) + 1):
            w = dc.softplus(self.matrices[i])
            h = dc.add(dc.bmm(w, h), self.biases[i])
            if i < len(FILTERS):
                gate = dc.tanh(self.factors[i])
                h = dc.add(h, dc.mul(gate, dc.tanh(h)))
        return h

    def bits(self, values: dc.Tensor) -> tuple[dc.Tensor, np.ndarray]:
        """Total codelength estimate of an (n, C) latent tensor.

        Returns (scalar bits tensor, per-symbol pmf array). Differentiable
        w.r.t. ``values`` and the chain parameters.
        """
        if values.ndim != 2 or values.shape[1] != self.channels:
            raise ShapeError(
                f"expected (n, {self.channels}) latents, got {values.shape}")
        n = values.shape[0]
        cols = dc.reshape(dc.transpose2(values), (self.channels, 1, n))
        upper = dc.sigmoid(self._logits(dc.add(cols, 0.5)))
        lower = dc.sigmoid(self._logits(dc.add(cols, -0.5)))
        pmf = dc.clamp_min(dc.sub(upper, lower), P_MIN)
        if not np.all(np.isfinite(pmf.data)):
            raise NumericError("non-finite pmf from factorized model")
        bits = dc.mul(dc.sum_all(dc.log(pmf)), -1.0 / _LN2)
        return bits, pmf.data.reshape(self.channels, n).T

    # -- coding path (pure numpy on possibly dequantized parameters) --------

    def pmf_table(self, s_min: int, s_max: int,
                  param_arrays: list[np.ndarray] | None = None) -> np.ndarray:
        """Per-channel pmf over the integer alphabet [s_min, s_max].

        ``param_arrays`` overrides the live parameters (decoder rebuilds
        tables from dequantized values); evaluation is float64 throughout,
        so both coder sides produce bit-identical tables.
        """
        arrays = param_arrays if param_arrays is not None else [
            t.data for t in self.param_tensors()]
        symbols = np.arange(s_min, s_max + 1, dtype=np.float64)
        grid = np.broadcast_to(symbols, (self.channels, 1, symbols.size))
        upper = _sigmoid(_chain_numpy(arrays, grid + 0.5))
        lower = _sigmoid(_chain_numpy(arrays, grid - 0.5))
        pmf = np.maximum(upper - lower, P_MIN)
        return pmf.reshape(self.channels, symbols.size)


def _chain_numpy(arrays: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64)
    pos = 0
    for i in range(len(FILTERS) + 1):
        m = np.asarray(arrays[pos], dtype=np.float64); pos += 1
        b = np.asarray(arrays[pos], dtype=np.float64); pos += 1
        w = np.maximum(m, 0.0) + np.log1p(np.exp(-np.abs(m)))
        h = np.matmul(w, h) + b
        if i < len(FILTERS):
            f = np.asarray(arrays[pos], dtype=np.float64); pos += 1
            h = h + np.tanh(f) * np.tanh(h)
    return h


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def factorized_bits(model: FactorizedModel, values: dc.Tensor):
    """Codelength of latents (training proxy or rounded symbols). See
    FactorizedModel.bits."""
    return model.bits(values)
