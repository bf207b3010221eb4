"""Frame-level encode/decode orchestration shared by the trainer and the CLI.

The encoder reconstructs every frame by running the real decoder on its own
chunk, so encoder-side reference state and decoder-side state are equal by
construction (no drift). Reconstruction runs at float32; training happens
elsewhere at float64.

Reference rules: P frames deform the previous decoded state; I frames deform
the state of the last I frame (frame 0 counts as one). Parameter coding
references the previous frame's decoded parameters for P frames and is
standalone for I frames, so both chains resynchronize at every I frame.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .bitstream import FrameChunk, LatentSection, NetLayerSection
from .deformation import (
    FrameTensors,
    NeuralGaussianFrame,
    OrthoCamera,
    apply_deformation,
    decode_attributes,
    render_ortho,
)
from .entropy import GaussianStatModel, build_cdf_table, range_decode_multi, \
    range_encode_multi
from .errors import StreamError
from .hierarchy import build_hierarchy, knn
from .latent_model import ModelSpec, TransmittedNets, aggregate, \
    default_networks, predict_deformation
from .netcodec import (
    CodedLayer,
    CodedParams,
    NetworkParams,
    RAW_DEPTH,
    decode_params,
    encode_iframe,
    encode_pframe,
    gop_type,
    layout_digest,
)


def spec_digest(spec: ModelSpec) -> int:
    """Layout digest covering layer names/shapes plus decode-relevant behavior."""
    nets = default_networks(spec, requires_grad=False)
    base = layout_digest(nets.layer_names(), nets.layer_shapes())
    behavior = (f"base={base},ila={int(spec.use_ila)},cla={int(spec.use_cla)},"
                f"self={int(spec.include_self)},k={spec.knn_k},"
                f"hidden={spec.hidden},sref={spec.scale_ref!r}")
    return int.from_bytes(
        hashlib.blake2b(behavior.encode(), digest_size=8).digest(), "little")


def spec_from_header(header) -> ModelSpec:
    """Recover the model spec from header dims by digest search.

    The header carries dims only; behavior toggles are resolved by matching
    the transmitted digest over the small candidate space.
    """
    for use_ila in (True, False):
        for use_cla in (True, False):
            if use_cla is False and header.scales > 1:
                continue
            for include_self in (False, True):
                for k in range(1, 9):
                    cand = ModelSpec(
                        channels=header.channels, scales=header.scales,
                        knn_k=k, feat_dim=header.feat_d,
                        offsets_per_anchor=header.offsets_m,
                        include_self=include_self, use_ila=use_ila,
                        use_cla=use_cla)
                    if spec_digest(cand) == header.layout_digest:
                        return cand
    raise StreamError("no model configuration matches the stream digest")


@dataclass
class DecodedFrame:
    state: NeuralGaussianFrame
    params: NetworkParams
    nets: TransmittedNets          # float32, loaded with decoded params
    chunk: FrameChunk


class FrameCodec:
    """Stateless per-frame coding against explicitly passed references."""

    def __init__(self, spec: ModelSpec, bits: int, t_gop: int):
        self.spec = spec
        self.bits = bits
        self.t_gop = t_gop
        template = default_networks(spec, requires_grad=False)
        self.layout = NetworkParams.from_nets(template)
        self.digest = spec_digest(spec)

    # -- shared structure ---------------------------------------------------

    def frame_type(self, t: int) -> str:
        return gop_type(t, self.t_gop)

    def reference(self, t: int, cur_state, last_i_state):
        return last_i_state if self.frame_type(t) == "I" else cur_state

    def build_levels(self, positions: np.ndarray, epsilons=None):
        eps = None
        if epsilons is not None:
            eps = [e for e in epsilons if e != 0.0]
            levels = build_hierarchy(np.asarray(positions, dtype=np.float64),
                                     len(eps) + 1, self.spec.scale_ratio,
                                     epsilons=eps)
        else:
            levels = build_hierarchy(np.asarray(positions, dtype=np.float64),
                                     self.spec.effective_scales,
                                     self.spec.scale_ratio)
        return levels

    def build_knns(self, levels):
        out = []
        for lvl in levels:
            include_self = self.spec.include_self or lvl.count == 1
            avail = lvl.count if include_self else lvl.count - 1
            out.append(knn(lvl, min(self.spec.knn_k, max(1, avail)),
                           include_self=include_self))
        return out

    def chunk_epsilons(self, levels) -> list[float]:
        eps = [float(np.float32(lvl.grid_size)) for lvl in levels[1:]]
        while len(eps) < self.spec.effective_scales - 1:
            eps.append(0.0)
        return eps

    # -- latent payloads ------------------------------------------------------

    def _latent_tables(self, nets: TransmittedNets, scale: int,
                       s_min: int, s_max: int):
        model = nets.factorized[scale]
        pmf = model.pmf_table(s_min, s_max)
        return [build_cdf_table(pmf[c], s_min, s_max)
                for c in range(model.channels)]

    def encode_latents(self, symbols_per_scale, nets_decoded) -> list[LatentSection]:
        sections = []
        for r, syms in enumerate(symbols_per_scale):
            s_min = int(syms.min())
            s_max = int(syms.max())
            tables = self._latent_tables(nets_decoded, r, s_min, s_max)
            n_r, c = syms.shape
            ids = np.repeat(np.arange(c, dtype=np.int64), n_r)
            payload = range_encode_multi(syms.T.reshape(-1), ids, tables)
            sections.append(LatentSection(s_min=s_min, s_max=s_max,
                                          payload=payload))
        return sections

    def decode_latents(self, sections, counts, nets_decoded):
        out = []
        for r, sec in enumerate(sections):
            tables = self._latent_tables(nets_decoded, r, sec.s_min, sec.s_max)
            n_r = counts[r]
            c = self.spec.channels
            ids = np.repeat(np.arange(c, dtype=np.int64), n_r)
            syms = range_decode_multi(sec.payload, ids, tables)
            out.append(syms.reshape(c, n_r).T)
        return out

    # -- parameter payload bridging ------------------------------------------

    def _coded_params_from_chunk(self, chunk: FrameChunk) -> CodedParams:
        layers = []
        for sec in chunk.net_layers:
            layers.append(CodedLayer(
                payload=sec.payload, v_min=sec.v_min, v_max=sec.v_max,
                stats=GaussianStatModel(sec.mu, sec.var), eta=sec.eta))
        return CodedParams(frame_type=chunk.frame_type, bits=self.bits,
                           layers=layers)

    def _sections_from_coded(self, coded: CodedParams) -> list[NetLayerSection]:
        out = []
        for layer in coded.layers:
            out.append(NetLayerSection(
                v_min=layer.v_min, v_max=layer.v_max, mu=layer.stats.mu,
                var=layer.stats.var,
                eta=layer.eta if (coded.frame_type == "P" and
                                  self.bits != RAW_DEPTH) else None,
                payload=layer.payload))
        return out

    # -- frame coding ----------------------------------------------------------

    def encode_frame(self, t: int, ref_state: NeuralGaussianFrame, levels,
                     latent_values: list[np.ndarray], params: NetworkParams,
                     prev_params: NetworkParams | None,
                     eta: list[float] | None) -> tuple[FrameChunk, DecodedFrame]:
        """Code one frame; returns the chunk and its real decode.

        ``latent_values`` are the trained float embeddings (rounded here);
        ``params`` the trained float parameters. The returned DecodedFrame is
        produced by the actual decoder on the freshly built chunk.
        """
        ftype = self.frame_type(t)
        if ftype == "I":
            coded, decoded_params = encode_iframe(params, self.bits)
        else:
            if prev_params is None:
                raise StreamError("P frame requires previous decoded parameters")
            coded, decoded_params = encode_pframe(
                params, prev_params,
                eta if eta is not None else [1.0] * params.layer_count,
                self.bits)
        nets_decoded = TransmittedNets(self.spec, dtype=np.float32,
                                       requires_grad=False)
        nets_decoded.load_values(dict(zip(decoded_params.names,
                                          decoded_params.values)))
        symbols = [np.rint(v).astype(np.int64) for v in latent_values]
        chunk = FrameChunk(
            frame_index=t, frame_type=ftype,
            epsilons=self.chunk_epsilons(levels),
            latents=self.encode_latents(symbols, nets_decoded),
            net_layers=self._sections_from_coded(coded),
        )
        decoded = self.decode_frame(chunk, ref_state, prev_params)
        return chunk, decoded

    def decode_frame(self, chunk: FrameChunk, ref_state: NeuralGaussianFrame,
                     prev_params: NetworkParams | None) -> DecodedFrame:
        """Reconstruct one frame from its chunk and the reference state."""
        levels = self.build_levels(ref_state.positions, chunk.epsilons)
        if len(levels) != chunk.built_scales:
            raise StreamError(
                f"decoder built {len(levels)} scales, chunk has {chunk.built_scales}")
        coded = self._coded_params_from_chunk(chunk)
        if coded.frame_type == "P" and prev_params is None:
            raise StreamError("P-frame chunk without parameter reference")
        params = decode_params(coded, self.layout, prev_params)
        nets = TransmittedNets(self.spec, dtype=np.float32, requires_grad=False)
        nets.load_values(dict(zip(params.names, params.values)))

        counts = [lvl.count for lvl in levels]
        symbols = self.decode_latents(chunk.latents, counts, nets)
        embeddings = [dc.Tensor(s.astype(np.float32)) for s in symbols]
        knns = self.build_knns(levels) if self.spec.use_ila else [None] * len(levels)
        agg = aggregate(embeddings, levels, knns, nets)
        field = predict_deformation(agg, nets)
        prev = FrameTensors.from_frame(ref_state, dtype=np.float32)
        new_state_tensors = apply_deformation(prev, field)
        state = new_state_tensors.to_frame(chunk.frame_index)
        return DecodedFrame(state=state, params=params, nets=nets, chunk=chunk)


def render_state(state: NeuralGaussianFrame, nets: TransmittedNets,
                 camera: OrthoCamera, height: int, width: int) -> np.ndarray:
    """Render a decoded frame at float32 (identical on both coder sides)."""
    tensors = FrameTensors.from_frame(state, dtype=np.float32)
    gaussians = decode_attributes(tensors, nets)
    img = render_ortho(gaussians, camera, height, width)
    return img.data.astype(np.float32)
