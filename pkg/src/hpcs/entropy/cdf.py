"""16-bit quantized cumulative-count tables bridging pmfs to the range coder.

Table construction is a pure function of (pmf, alphabet bounds): both coder
sides rebuild identical tables from the same dequantized model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError, ParameterError
from .rans import PROB_SCALE

P_MIN = 2.0 ** -16   # pmf floor; guarantees finite codelength for any symbol


@dataclass
class CdfTable:
    """Cumulative counts over the integer alphabet [s_min, s_max]."""

    s_min: int
    s_max: int
    freq: np.ndarray          # (K,) int64, every entry >= 1
    cum: np.ndarray           # (K,) int64 exclusive cumulative
    _lookup: np.ndarray | None = field(default=None, repr=False)

    @property
    def alphabet_size(self) -> int:
        return self.s_max - self.s_min + 1

    def slot_to_symbol(self) -> np.ndarray:
        if self._lookup is None:
            self._lookup = np.repeat(
                np.arange(self.freq.size, dtype=np.int64), self.freq)
        return self._lookup

    def bits_for(self, symbols) -> float:
        """Ideal codelength of ``symbols`` under this table (no coder overhead)."""
        syms = np.asarray(symbols, dtype=np.int64).reshape(-1) - self.s_min
        p = self.freq[syms] / PROB_SCALE
        return float(np.sum(-np.log2(p)))


def build_cdf_table(pmf: np.ndarray, s_min: int, s_max: int) -> CdfTable:
    """Quantize a pmf over [s_min, s_max] into counts summing to 2^16.

    Every symbol keeps at least one count (zero-width-bin repair); the
    rounding deficit goes to the most probable symbol, so the table is a
    deterministic function of the pmf.
    """
    pmf = np.asarray(pmf, dtype=np.float64).reshape(-1)
    k = s_max - s_min + 1
    if pmf.size != k:
        raise ParameterError(f"pmf length {pmf.size} != alphabet size {k}")
    if k > PROB_SCALE:
        raise FormatError(f"alphabet size {k} exceeds coder precision {PROB_SCALE}")
    if not np.all(np.isfinite(pmf)):
        raise FormatError("non-finite pmf")
    p = np.maximum(pmf, P_MIN)
    p = p / p.sum()
    freq = np.floor(p * (PROB_SCALE - k)).astype(np.int64) + 1
    deficit = PROB_SCALE - int(freq.sum())
    # deficit >= 0 because sum(floor(.)) <= PROB_SCALE - k
    freq[int(np.argmax(p))] += deficit
    cum = np.concatenate([[0], np.cumsum(freq)[:-1]]).astype(np.int64)
    return CdfTable(s_min=int(s_min), s_max=int(s_max), freq=freq, cum=cum)
