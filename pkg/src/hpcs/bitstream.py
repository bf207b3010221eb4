"""Byte-exact container for coded streams.

Layout (all little-endian):

  StreamHeader (37 bytes):
      magic "HPCS" | version u16 | frame count u32 | anchor count u32 |
      M u8 | D u8 | C u8 | L u8 | B u8 | T_GOP u16 |
      network layout digest u64 | initial-frame payload length u64

  Initial frame payload:
      n u32 | M u8 | D u8 | X f32[3n] | o f32[3nM] | F f32[nD] | l f32[3n]

  FrameChunk: [u64 body length][body][u32 crc32(body)] with body =
      frame index u32 | frame type u8 (0=I, 1=P) | eps f32[L-1]
      per built scale: s_min i32 | s_max i32 | payload length u32 | payload
      per network layer: v_min f32 | v_max f32 | mu f32 | var f32
                         (| eta f32 for P frames at coded bit depths)
                         | payload length u32 | payload

Unused eps slots (degenerate hierarchies) hold 0.0; the built-scale count is
1 + the number of nonzero eps entries.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .deformation import NeuralGaussianFrame
from .errors import FormatError
from .netcodec import RAW_DEPTH

MAGIC = b"HPCS"
VERSION = 1
_HEADER_FMT = "<4sHIIBBBBBHQQ"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass
class StreamHeader:
    frame_count: int
    anchor_count: int
    offsets_m: int
    feat_d: int
    channels: int
    scales: int
    bit_depth: int
    t_gop: int
    layout_digest: int
    initial_len: int
    version: int = VERSION

    def pack(self) -> bytes:
        return struct.pack(_HEADER_FMT, MAGIC, self.version, self.frame_count,
                           self.anchor_count, self.offsets_m, self.feat_d,
                           self.channels, self.scales, self.bit_depth,
                           self.t_gop, self.layout_digest, self.initial_len)

    @classmethod
    def unpack(cls, data: bytes, offset: int = 0) -> "StreamHeader":
        if len(data) - offset < HEADER_SIZE:
            raise FormatError("truncated stream header", offset=len(data))
        (magic, version, frames, anchors, m, d, c, l, b, t_gop,
         digest, init_len) = struct.unpack_from(_HEADER_FMT, data, offset)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", offset=offset)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", offset=offset + 4)
        return cls(frame_count=frames, anchor_count=anchors, offsets_m=m,
                   feat_d=d, channels=c, scales=l, bit_depth=b, t_gop=t_gop,
                   layout_digest=digest, initial_len=init_len, version=version)


@dataclass
class LatentSection:
    s_min: int
    s_max: int
    payload: bytes


@dataclass
class NetLayerSection:
    v_min: float
    v_max: float
    mu: float
    var: float
    eta: float | None
    payload: bytes


@dataclass
class FrameChunk:
    frame_index: int
    frame_type: str                      # 'I' or 'P'
    epsilons: list[float]                # length scales-1, zero-padded
    latents: list[LatentSection]
    net_layers: list[NetLayerSection]

    @property
    def built_scales(self) -> int:
        return len(self.latents)

    def latent_bytes(self) -> int:
        return sum(len(s.payload) for s in self.latents)

    def net_bytes(self) -> int:
        return sum(len(s.payload) for s in self.net_layers)

    def to_body(self) -> bytes:
        out = bytearray(struct.pack("<IB", self.frame_index,
                                    0 if self.frame_type == "I" else 1))
        for e in self.epsilons:
            out += struct.pack("<f", np.float32(e))
        for sec in self.latents:
            out += struct.pack("<iiI", sec.s_min, sec.s_max, len(sec.payload))
            out += sec.payload
        for layer in self.net_layers:
            out += struct.pack("<ffff", np.float32(layer.v_min),
                               np.float32(layer.v_max), np.float32(layer.mu),
                               np.float32(layer.var))
            if layer.eta is not None:
                out += struct.pack("<f", np.float32(layer.eta))
            out += struct.pack("<I", len(layer.payload))
            out += layer.payload
        return bytes(out)

    @classmethod
    def from_body(cls, body: bytes, scales: int, bit_depth: int,
                  base_offset: int = 0) -> "FrameChunk":
        pos = 0

        def need(n, what):
            nonlocal pos
            if pos + n > len(body):
                raise FormatError(f"chunk truncated reading {what}",
                                  offset=base_offset + pos)
            val = body[pos:pos + n]
            pos += n
            return val

        idx, ftype_code = struct.unpack("<IB", need(5, "chunk prefix"))
        if ftype_code not in (0, 1):
            raise FormatError(f"unknown frame type {ftype_code}",
                              offset=base_offset + 4)
        eps = []
        for _ in range(scales - 1):
            eps.append(struct.unpack("<f", need(4, "epsilon"))[0])
        built = 1 + sum(1 for e in eps if e != 0.0)
        latents = []
        for _ in range(built):
            s_min, s_max, ln = struct.unpack("<iiI", need(12, "latent side info"))
            latents.append(LatentSection(s_min, s_max, bytes(need(ln, "latent payload"))))
        net_layers = []
        has_eta = ftype_code == 1 and bit_depth != RAW_DEPTH
        while pos < len(body):
            v_min, v_max, mu, var = struct.unpack("<ffff", need(16, "net side info"))
            eta = struct.unpack("<f", need(4, "eta"))[0] if has_eta else None
            (ln,) = struct.unpack("<I", need(4, "net payload length"))
            net_layers.append(NetLayerSection(v_min, v_max, mu, var, eta,
                                              bytes(need(ln, "net payload"))))
        return cls(frame_index=idx, frame_type="I" if ftype_code == 0 else "P",
                   epsilons=eps, latents=latents, net_layers=net_layers)

    def serialized_size(self) -> int:
        return 12 + len(self.to_body())


def write_chunk(chunk: FrameChunk) -> bytes:
    body = chunk.to_body()
    return struct.pack("<Q", len(body)) + body + struct.pack("<I", zlib.crc32(body))


def read_chunk(data: bytes, offset: int, scales: int,
               bit_depth: int) -> tuple[FrameChunk, int]:
    if offset + 8 > len(data):
        raise FormatError("truncated chunk length", offset=offset)
    (body_len,) = struct.unpack_from("<Q", data, offset)
    body_start = offset + 8
    body_end = body_start + body_len
    if body_end + 4 > len(data):
        raise FormatError("truncated chunk body", offset=len(data))
    body = data[body_start:body_end]
    (crc,) = struct.unpack_from("<I", data, body_end)
    if crc != zlib.crc32(body):
        raise FormatError("chunk CRC mismatch", offset=body_end)
    chunk = FrameChunk.from_body(body, scales, bit_depth, base_offset=body_start)
    return chunk, body_end + 4


def initial_frame_to_bytes(frame: NeuralGaussianFrame) -> bytes:
    """Raw float32 serialization of the initial frame state."""
    n = frame.anchor_count
    m = frame.offsets_per_anchor
    d = frame.features.shape[1]
    out = bytearray(struct.pack("<IBB", n, m, d))
    for arr in (frame.positions, frame.offsets, frame.features, frame.scalings):
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def initial_frame_from_bytes(data: bytes, base_offset: int = 0) -> NeuralGaussianFrame:
    if len(data) < 6:
        raise FormatError("truncated initial frame header", offset=base_offset)
    n, m, d = struct.unpack_from("<IBB", data, 0)
    counts = (3 * n, 3 * n * m, n * d, 3 * n)
    expected = 6 + 4 * sum(counts)
    if len(data) != expected:
        raise FormatError(
            f"initial frame payload is {len(data)} bytes, expected {expected}",
            offset=base_offset)
    pos = 6
    arrays = []
    for cnt in counts:
        arrays.append(np.frombuffer(data, dtype="<f4", count=cnt, offset=pos
                                    ).astype(np.float32))
        pos += 4 * cnt
    return NeuralGaussianFrame(
        positions=arrays[0].reshape(n, 3),
        offsets=arrays[1].reshape(n, m, 3),
        features=arrays[2].reshape(n, d),
        scalings=arrays[3].reshape(n, 3),
        t=0,
    )


def write_stream(header: StreamHeader, initial_payload: bytes,
                 chunks: list[FrameChunk]) -> bytes:
    header.initial_len = len(initial_payload)
    out = bytearray(header.pack())
    out += initial_payload
    last = -1
    for chunk in chunks:
        if chunk.frame_index <= last:
            raise FormatError(
                f"chunks out of order: {chunk.frame_index} after {last}")
        last = chunk.frame_index
        out += write_chunk(chunk)
    return bytes(out)


def read_stream(data: bytes):
    """Parse a stream; returns (header, initial frame, chunk iterator).

    The iterator yields chunks lazily so corrupt tails surface only when
    reached.
    """
    header = StreamHeader.unpack(data)
    pos = HEADER_SIZE
    if pos + header.initial_len > len(data):
        raise FormatError("truncated initial frame payload", offset=len(data))
    initial = initial_frame_from_bytes(
        data[pos:pos + header.initial_len], base_offset=pos)
    pos += header.initial_len

    def chunks():
        offset = pos
        while offset < len(data):
            chunk, offset = yield_chunk(offset)
            yield chunk

    def yield_chunk(offset):
        return read_chunk(data, offset, header.scales, header.bit_depth)

    return header, initial, chunks()
