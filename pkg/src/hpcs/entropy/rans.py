"""Bit-exact range coder (rANS, 64-bit state, 32-bit renormalization).

Frequencies are 16-bit quantized cumulative counts summing to exactly
2^16. Encoding walks the symbols in reverse and emits 32-bit words; the
payload is [u64 final state][words in decode order]. Decoding is the exact
inverse, so decode(encode(s)) == s for any in-alphabet input.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

PROB_BITS = 16
PROB_SCALE = 1 << PROB_BITS
RANS_L = 1 << 31
_MASK32 = 0xFFFFFFFF


def range_encode(symbols, cdf) -> bytes:
    """Encode integer symbols with the given CdfTable."""
    syms = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if syms.size:
        lo, hi = int(syms.min()), int(syms.max())
        if lo < cdf.s_min or hi > cdf.s_max:
            raise FormatError(
                f"symbol out of alphabet [{cdf.s_min}, {cdf.s_max}]: saw [{lo}, {hi}]")
    freq = cdf.freq.tolist()
    cum = cdf.cum.tolist()
    base = cdf.s_min
    x = RANS_L
    words = []
    shift = RANS_L >> PROB_BITS
    for s in reversed(syms.tolist()):
        i = s - base
        f = freq[i]
        if x >= (shift << 32) * f:
            words.append(x & _MASK32)
            x >>= 32
        x = ((x // f) << PROB_BITS) + (x % f) + cum[i]
    out = bytearray(struct.pack("<Q", x))
    for w in reversed(words):
        out += struct.pack("<I", w)
    return bytes(out)


def range_decode(payload: bytes, cdf, count: int) -> np.ndarray:
    """Decode ``count`` symbols; exact inverse of range_encode."""
    if len(payload) < 8:
        raise FormatError("range payload shorter than state header", offset=len(payload))
    if (len(payload) - 8) % 4:
        raise FormatError("range payload not word aligned")
    x = struct.unpack_from("<Q", payload, 0)[0]
    words = memoryview(payload)[8:]
    n_words = len(words) // 4
    wpos = 0
    freq = cdf.freq.tolist()
    cum = cdf.cum.tolist()
    lookup = cdf.slot_to_symbol().tolist()
    base = cdf.s_min
    out = np.empty(count, dtype=np.int64)
    mask = PROB_SCALE - 1
    for i in range(count):
        slot = x & mask
        s = lookup[slot]
        x = freq[s] * (x >> PROB_BITS) + slot - cum[s]
        if x < RANS_L:
            if wpos >= n_words:
                raise FormatError("range payload truncated", offset=8 + 4 * wpos)
            x = (x << 32) | struct.unpack_from("<I", words, 4 * wpos)[0]
            wpos += 1
        out[i] = s + base
    return out


def range_encode_multi(symbols, table_ids, tables) -> bytes:
    """Encode one stream whose i-th symbol uses tables[table_ids[i]].

    The decoder must replay the same table sequence; used for channel-major
    latent payloads where every channel owns a CDF table.
    """
    syms = np.asarray(symbols, dtype=np.int64).reshape(-1)
    ids = np.asarray(table_ids, dtype=np.int64).reshape(-1)
    if syms.size != ids.size:
        raise FormatError("table_ids length must match symbols")
    freqs = [t.freq.tolist() for t in tables]
    cums = [t.cum.tolist() for t in tables]
    bases = [t.s_min for t in tables]
    maxs = [t.s_max for t in tables]
    x = RANS_L
    words = []
    shift = RANS_L >> PROB_BITS
    for j in range(syms.size - 1, -1, -1):
        tid = ids[j]
        s = int(syms[j])
        if s < bases[tid] or s > maxs[tid]:
            raise FormatError(
                f"symbol {s} outside alphabet [{bases[tid]}, {maxs[tid]}] of table {tid}")
        i = s - bases[tid]
        f = freqs[tid][i]
        if x >= (shift << 32) * f:
            words.append(x & _MASK32)
            x >>= 32
        x = ((x // f) << PROB_BITS) + (x % f) + cums[tid][i]
    out = bytearray(struct.pack("<Q", x))
    for w in reversed(words):
        out += struct.pack("<I", w)
    return bytes(out)


def range_decode_multi(payload: bytes, table_ids, tables) -> np.ndarray:
    """Inverse of range_encode_multi for the given table sequence."""
    ids = np.asarray(table_ids, dtype=np.int64).reshape(-1)
    if len(payload) < 8:
        raise FormatError("range payload shorter than state header", offset=len(payload))
    if (len(payload) - 8) % 4:
        raise FormatError("range payload not word aligned")
    x = struct.unpack_from("<Q", payload, 0)[0]
    words = memoryview(payload)[8:]
    n_words = len(words) // 4
    wpos = 0
    freqs = [t.freq.tolist() for t in tables]
    cums = [t.cum.tolist() for t in tables]
    lookups = [t.slot_to_symbol().tolist() for t in tables]
    bases = [t.s_min for t in tables]
    out = np.empty(ids.size, dtype=np.int64)
    mask = PROB_SCALE - 1
    for j in range(ids.size):
        tid = ids[j]
        slot = x & mask
        s = lookups[tid][slot]
        x = freqs[tid][s] * (x >> PROB_BITS) + slot - cums[tid][s]
        if x < RANS_L:
            if wpos >= n_words:
                raise FormatError("range payload truncated", offset=8 + 4 * wpos)
            x = (x << 32) | struct.unpack_from("<I", words, 4 * wpos)[0]
            wpos += 1
        out[j] = s + bases[tid]
    return out
