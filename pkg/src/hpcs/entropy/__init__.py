"""Quantization proxies, entropy models, and the bit-exact range coder."""

from .cdf import CdfTable, P_MIN, build_cdf_table
from .factorized import FILTERS, FactorizedModel, factorized_bits
from .gaussian import (
    GaussianStatModel,
    VAR_FLOOR,
    fit_stats,
    gaussian_bits,
    gaussian_bits_train,
    gaussian_pmf,
    gaussian_pmf_table,
)
from .quantize import quantize_noise, quantize_ste
from .rans import (
    range_decode,
    range_decode_multi,
    range_encode,
    range_encode_multi,
)

__all__ = [
    "CdfTable", "P_MIN", "build_cdf_table",
    "FILTERS", "FactorizedModel", "factorized_bits",
    "GaussianStatModel", "VAR_FLOOR", "fit_stats", "gaussian_bits",
    "gaussian_bits_train", "gaussian_pmf", "gaussian_pmf_table",
    "quantize_noise", "quantize_ste",
    "range_decode", "range_decode_multi", "range_encode", "range_encode_multi",
]
