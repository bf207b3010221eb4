"""I/P compression of transmitted network parameters.

I-frames: per-layer min-max quantization to B bits, network-free Gaussian
entropy coding. P-frames: a learnable per-layer scaling of the previous
decoded parameters predicts the current ones; the residual is quantized
over the joint (reference, residual) dynamic range and entropy coded. The
reconstruction chain runs on decoded symbols only, so encoder and decoder
reference states never drift.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .entropy import (
    build_cdf_table,
    fit_stats,
    gaussian_pmf_table,
    GaussianStatModel,
    range_decode,
    range_encode,
)
from .errors import FormatError, NumericError, ParameterError, StreamError

QUANT_DEPTHS = (4, 8, 16)
RAW_DEPTH = 32    # sentinel: parameters stored as raw float32, no entropy coding


@dataclass
class NetworkParams:
    """Layer-segmented snapshot of every transmitted network."""

    names: list[str]
    shapes: list[list[tuple[int, ...]]]       # member shapes per layer
    values: list[np.ndarray]                  # flat float vector per layer

    @property
    def layer_count(self) -> int:
        return len(self.names)

    def layout_digest(self) -> int:
        return layout_digest(self.names, self.shapes)

    @classmethod
    def from_nets(cls, nets) -> "NetworkParams":
        return cls(
            names=nets.layer_names(),
            shapes=nets.layer_shapes(),
            values=[nets.flatten_layer(n) for n in nets.layer_names()],
        )

    def total_values(self) -> int:
        return int(sum(v.size for v in self.values))


def layout_digest(names, shapes) -> int:
    """64-bit digest of the (name, member shapes) layout."""
    text = ";".join(
        f"{n}:" + ",".join("x".join(map(str, s)) for s in mshapes)
        for n, mshapes in zip(names, shapes)
    )
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(),
                          "little")


@dataclass
class PFrameSideInfo:
    """Per-layer residual-coding side info."""

    eta: list[float]
    v_min: list[float]
    v_max: list[float]


# -- scalar quantizer -------------------------------------------------------


def _f32_bounds(v_min: float, v_max: float) -> tuple[float, float]:
    """Round bounds to the transmitted float32 grid, widened outward so every
    value stays inside [v_min, v_max] after rounding."""
    lo = np.float32(v_min)
    if lo > v_min:
        lo = np.nextafter(lo, np.float32(-np.inf))
    hi = np.float32(v_max)
    if hi < v_max:
        hi = np.nextafter(hi, np.float32(np.inf))
    return float(lo), float(hi)


def quantize_minmax(values: np.ndarray, bits: int):
    """Min-max scale to [0, 2^B - 1] and round half-to-even.

    Returns (symbols, v_min, v_max). The bounds are pre-rounded to float32
    (they travel as f32 side info, and dequantization must use the exact
    transmitted values). A constant tensor maps to all-zero symbols with
    v_min == v_max, dequantizing back to the constant.
    """
    if bits not in QUANT_DEPTHS:
        raise ParameterError(f"bit depth must be one of {QUANT_DEPTHS}, got {bits}")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericError("quantize_minmax requires finite values")
    v_min = float(values.min()) if values.size else 0.0
    v_max = float(values.max()) if values.size else 0.0
    if v_max == v_min:
        v32 = float(np.float32(v_min))
        return np.zeros(values.shape, dtype=np.int64), v32, v32
    v_min, v_max = _f32_bounds(v_min, v_max)
    levels = (1 << bits) - 1
    symbols = np.rint((values - v_min) / (v_max - v_min) * levels).astype(np.int64)
    return symbols, v_min, v_max


def dequantize_minmax(symbols: np.ndarray, v_min: float, v_max: float,
                      bits: int) -> np.ndarray:
    """Exact affine inverse of quantize_minmax."""
    if bits not in QUANT_DEPTHS:
        raise ParameterError(f"bit depth must be one of {QUANT_DEPTHS}, got {bits}")
    symbols = np.asarray(symbols)
    levels = (1 << bits) - 1
    if symbols.size and (symbols.min() < 0 or symbols.max() > levels):
        raise FormatError(f"symbol outside [0, {levels}]")
    if v_max == v_min:
        return np.full(symbols.shape, v_min, dtype=np.float64)
    return symbols.astype(np.float64) * (v_max - v_min) / levels + v_min


def symbol_scale(values, v_min, v_max, bits):
    """Affine map into symbol space without rounding (training proxies)."""
    levels = (1 << bits) - 1
    if v_max == v_min:
        return np.zeros_like(np.asarray(values, dtype=np.float64))
    return (np.asarray(values, dtype=np.float64) - v_min) / (v_max - v_min) * levels


# -- GOP schedule ------------------------------------------------------------


@dataclass
class GopSchedule:
    t_gop: int = 5

    def __post_init__(self):
        if self.t_gop < 1:
            raise ParameterError("GOP size must be >= 1")

    def frame_type(self, t: int) -> str:
        return gop_type(t, self.t_gop)


def gop_type(t: int, t_gop: int) -> str:
    """'I' when t mod T_GOP == 0, else 'P'."""
    if t < 0 or t_gop < 1:
        raise ParameterError("need t >= 0 and T_GOP >= 1")
    return "I" if t % t_gop == 0 else "P"


# -- layer payloads ----------------------------------------------------------


@dataclass
class CodedLayer:
    payload: bytes
    v_min: float
    v_max: float
    stats: GaussianStatModel
    eta: float | None = None    # P-frames only

    def side_info_bytes(self, is_pframe: bool) -> bytes:
        out = struct.pack("<ffff", np.float32(self.v_min), np.float32(self.v_max),
                          np.float32(self.stats.mu), np.float32(self.stats.var))
        if is_pframe:
            out += struct.pack("<f", np.float32(self.eta))
        return out


@dataclass
class CodedParams:
    frame_type: str
    bits: int
    layers: list[CodedLayer]

    def payload_bytes(self) -> int:
        return sum(len(l.payload) for l in self.layers)

    def side_info_size(self) -> int:
        per = 20 if self.frame_type == "P" else 16
        return per * len(self.layers)


def _code_symbols(symbols: np.ndarray, bits: int) -> tuple[bytes, GaussianStatModel]:
    stats = fit_stats(symbols)
    pmf = gaussian_pmf_table(stats, 0, (1 << bits) - 1)
    table = build_cdf_table(pmf, 0, (1 << bits) - 1)
    return range_encode(symbols, table), stats


def _decode_symbols(payload: bytes, stats: GaussianStatModel, bits: int,
                    count: int) -> np.ndarray:
    pmf = gaussian_pmf_table(stats, 0, (1 << bits) - 1)
    table = build_cdf_table(pmf, 0, (1 << bits) - 1)
    return range_decode(payload, table, count)


def encode_iframe(params: NetworkParams, bits: int) -> tuple[CodedParams, NetworkParams]:
    """Standalone coding of all layers; returns the chunk data and the
    decoded-side reconstruction used as the next temporal reference."""
    layers = []
    decoded = []
    if bits == RAW_DEPTH:
        for v in params.values:
            raw = v.astype(np.float32)
            layers.append(CodedLayer(payload=raw.tobytes(), v_min=0.0, v_max=0.0,
                                     stats=GaussianStatModel(0.0, 0.0)))
            decoded.append(raw.astype(np.float64))
    else:
        for v in params.values:
            symbols, v_min, v_max = quantize_minmax(v, bits)
            payload, stats = _code_symbols(symbols, bits)
            layers.append(CodedLayer(payload=payload, v_min=v_min, v_max=v_max,
                                     stats=stats))
            decoded.append(dequantize_minmax(symbols, v_min, v_max, bits))
    recon = NetworkParams(names=list(params.names),
                          shapes=[list(s) for s in params.shapes],
                          values=decoded)
    return CodedParams(frame_type="I", bits=bits, layers=layers), recon


def encode_pframe(params: NetworkParams, prev_decoded: NetworkParams,
                  eta: list[float], bits: int) -> tuple[CodedParams, NetworkParams]:
    """Residual coding against the previous decoded parameters.

    Per layer: residual = P - eta * ref; the quantization range spans both
    the reference and the residual, keeping reconstruction precision at the
    full parameter dynamic range. Reconstruction uses decoded residuals only.
    """
    if params.names != prev_decoded.names:
        raise StreamError("parameter layout mismatch between frames")
    if bits == RAW_DEPTH:
        coded, recon = encode_iframe(params, bits)
        return CodedParams(frame_type="P", bits=bits, layers=coded.layers), recon
    layers = []
    decoded = []
    for v, ref, e in zip(params.values, prev_decoded.values, eta):
        e = float(np.float32(e))    # eta travels at f32; code with what we send
        residual = v - e * ref
        v_min = float(min(ref.min(), residual.min())) if ref.size else 0.0
        v_max = float(max(ref.max(), residual.max())) if ref.size else 0.0
        if v_max == v_min:
            v_min = v_max = float(np.float32(v_min))
            symbols = np.zeros(residual.shape, dtype=np.int64)
        else:
            v_min, v_max = _f32_bounds(v_min, v_max)
            levels = (1 << bits) - 1
            symbols = np.rint((residual - v_min) / (v_max - v_min) * levels).astype(np.int64)
        payload, stats = _code_symbols(symbols, bits)
        layers.append(CodedLayer(payload=payload, v_min=v_min, v_max=v_max,
                                 stats=stats, eta=e))
        res_hat = dequantize_minmax(symbols, v_min, v_max, bits) if v_max > v_min \
            else np.full(residual.shape, v_min)
        decoded.append(e * ref + res_hat)
    recon = NetworkParams(names=list(params.names),
                          shapes=[list(s) for s in params.shapes],
                          values=decoded)
    return CodedParams(frame_type="P", bits=bits, layers=layers), recon


def decode_params(coded: CodedParams, layout: NetworkParams,
                  prev_decoded: NetworkParams | None) -> NetworkParams:
    """Reconstruct parameters from coded layers (decoder side)."""
    values = []
    for i, layer in enumerate(coded.layers):
        count = int(sum(int(np.prod(s)) for s in layout.shapes[i]))
        if coded.bits == RAW_DEPTH:
            flat = np.frombuffer(layer.payload, dtype="<f4", count=count)
            values.append(flat.astype(np.float64))
            continue
        symbols = _decode_symbols(layer.payload, layer.stats, coded.bits, count)
        if coded.frame_type == "I":
            values.append(dequantize_minmax(symbols, layer.v_min, layer.v_max,
                                            coded.bits))
        else:
            if prev_decoded is None:
                raise StreamError("P-frame without a parameter reference")
            ref = prev_decoded.values[i]
            if layer.v_max > layer.v_min:
                res = dequantize_minmax(symbols, layer.v_min, layer.v_max, coded.bits)
            else:
                res = np.full(count, layer.v_min)
            values.append(layer.eta * ref + res)
    return NetworkParams(names=list(layout.names),
                         shapes=[list(s) for s in layout.shapes],
                         values=values)
