"""Per-frame rate-distortion training and the streaming encode/decode drivers.

Each frame trains its latent embeddings, the transmitted networks, and (for
P frames) the per-layer reference scalings by minimizing
lambda * rate + distortion, with straight-through quantization on the
distortion path and additive-noise proxies on the rate path. The frame is
then really coded, and the encoder adopts the decoded state as its next
reference.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .. import diffcore as dc
from ..bitstream import StreamHeader, initial_frame_to_bytes, read_stream, \
    write_stream
from ..codec import DecodedFrame, FrameCodec, render_state, spec_from_header
from ..deformation import FrameTensors, apply_deformation, decode_attributes, \
    render_ortho
from ..entropy import factorized_bits, gaussian_bits_train
from ..entropy.factorized import FactorizedModel
from ..errors import StreamError, TrainingDivergence
from ..latent_model import TransmittedNets, aggregate, default_networks, \
    init_latents, predict_deformation
from ..netcodec import NetworkParams, RAW_DEPTH
from .config import RdConfig
from .loss import rd_loss
from .metrics import psnr, ssim_value
from .optim import Adam


@dataclass
class FrameReport:
    frame: int
    frame_type: str
    latent_bits_est: float
    latent_bits_actual: float
    net_bits_est: float
    net_bits_actual: float
    chunk_bytes: int
    psnr: float | None
    ssim: float | None

    def as_dict(self) -> dict:
        return {
            "frame": self.frame, "type": self.frame_type,
            "latent_bits_est": self.latent_bits_est,
            "latent_bits_actual": self.latent_bits_actual,
            "net_bits_est": self.net_bits_est,
            "net_bits_actual": self.net_bits_actual,
            "chunk_bytes": self.chunk_bytes,
            "kb": self.chunk_bytes / 1000.0,
            "psnr": self.psnr, "ssim": self.ssim,
        }


@dataclass
class RateReport:
    rows: list[FrameReport] = field(default_factory=list)

    def coded_rows(self) -> list[FrameReport]:
        return [r for r in self.rows if r.frame > 0]

    def total_coded_bytes(self) -> int:
        return sum(r.chunk_bytes for r in self.coded_rows())

    def mean_psnr(self) -> float:
        vals = [r.psnr for r in self.coded_rows() if r.psnr is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        coded = self.coded_rows()
        return {
            "frames": len(self.rows),
            "coded_frames": len(coded),
            "total_coded_kb": self.total_coded_bytes() / 1000.0,
            "mean_kb_per_frame": (self.total_coded_bytes() / 1000.0 / len(coded))
            if coded else 0.0,
            "mean_psnr": self.mean_psnr(),
            "mean_ssim": float(np.mean([r.ssim for r in coded
                                        if r.ssim is not None])) if coded else None,
        }

    def to_json(self) -> str:
        return json.dumps({"frames": [r.as_dict() for r in self.rows],
                           "summary": self.summary()}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["frame", "type", "latent_bits_est", "latent_bits_actual",
                  "net_bits_est", "net_bits_actual", "chunk_bytes", "kb",
                  "psnr", "ssim"]
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        for r in self.rows:
            writer.writerow(r.as_dict())
        return buf.getvalue()


def _flatten_entry(tensors) -> dc.Tensor:
    parts = [dc.reshape(t, (1, t.size)) for t in tensors]
    return parts[0] if len(parts) == 1 else dc.concat(parts, axis=1)


def _split_entry(flat_row: dc.Tensor, tensors) -> list[dc.Tensor]:
    out = []
    pos = 0
    for t in tensors:
        piece = dc.slice_cols(flat_row, pos, pos + t.size)
        out.append(dc.reshape(piece, t.shape))
        pos += t.size
    return out


class _QuantizedView:
    """Duck-typed TransmittedNets whose entry tensors are STE-quantized graph
    nodes, plus the per-layer noisy-proxy rate estimate."""

    def __init__(self, nets: TransmittedNets, bits: int, frame_type: str,
                 prev_params: NetworkParams | None, etas, rng):
        self.spec = nets.spec
        self.entries = {}
        self.factorized = nets.factorized       # rate path keeps float params
        self.net_rate_bits = None               # scalar tensor, total bits
        self.value_count = 0
        levels = float((1 << bits) - 1)
        rate_terms = []
        for i, (name, tensors) in enumerate(nets.entries.items()):
            flat = _flatten_entry(tensors)      # (1, sz)
            sz = flat.shape[1]
            self.value_count += sz
            if frame_type == "P":
                ref = prev_params.values[i].reshape(1, sz)
                resid = dc.sub(flat, dc.mul(dc.Tensor(ref), etas[name]))
                v_min = float(min(ref.min(), resid.data.min()))
                v_max = float(max(ref.max(), resid.data.max()))
                target = resid
            else:
                v_min = float(flat.data.min())
                v_max = float(flat.data.max())
                target = flat
            if v_max > v_min:
                scale = levels / (v_max - v_min)
                sym = dc.mul(dc.add(target, -v_min), scale)
                deq = dc.add(dc.mul(dc.round_ste(sym), 1.0 / scale), v_min)
                noisy = dc.add(sym, dc.Tensor(
                    rng.uniform(-0.5, 0.5, (1, sz))))
                rate_terms.append(gaussian_bits_train(noisy))
            else:
                deq = target                    # constant layer, coded as zeros
            if frame_type == "P":
                recon = dc.add(dc.mul(dc.Tensor(ref), etas[name]), deq)
            else:
                recon = deq
            self.entries[name] = _split_entry(recon, tensors)
        if rate_terms:
            total = rate_terms[0]
            for term in rate_terms[1:]:
                total = dc.add(total, term)
            self.net_rate_bits = total


class StreamEncoder:
    """Trains and codes one scene into a bitstream."""

    def __init__(self, scene, cfg: RdConfig):
        self.scene = scene
        self.cfg = cfg
        self.spec = cfg.spec
        self.codec = FrameCodec(self.spec, cfg.effective_bits, cfg.t_gop)
        self.camera = scene.camera
        self.train_nets = default_networks(self.spec, dtype=np.float64,
                                           requires_grad=True)
        ref_nets = default_networks(self.spec, requires_grad=False)
        self.prev_params = NetworkParams.from_nets(ref_nets)
        self.state = scene.initial
        self.last_i_state = scene.initial
        self.prev_latents = None

    # -- single training iteration -------------------------------------------

    def _iteration(self, ref_tensors, levels, knns, latents, etas, target,
                   frame_type, rng):
        cfg = self.cfg
        ste_embs = [dc.round_ste(e) for e in latents]
        latent_bits = None
        model_bits = None
        count = 0
        for r, emb in enumerate(latents):
            noisy = dc.add(emb, dc.Tensor(rng.uniform(-0.5, 0.5, emb.shape)))
            bits, _ = factorized_bits(self.train_nets.factorized[r], noisy)
            # second pass with the latents detached: trains the entropy model
            # at full strength regardless of how small lambda is
            aux, _ = factorized_bits(self.train_nets.factorized[r],
                                     dc.stop_gradient(noisy))
            count += emb.size
            latent_bits = bits if latent_bits is None else dc.add(latent_bits, bits)
            model_bits = aux if model_bits is None else dc.add(model_bits, aux)
        model_rate = dc.mul(model_bits, 1.0 / count)

        if cfg.effective_bits == RAW_DEPTH:
            nets_view = self.train_nets
            net_bits = dc.Tensor(np.zeros(()))
            total = count
        else:
            view = _QuantizedView(self.train_nets, cfg.effective_bits,
                                  frame_type, self.prev_params, etas, rng)
            nets_view = view
            net_bits = view.net_rate_bits
            total = count + view.value_count
        # one normalizer for both streams so every bit carries the same price
        latent_rate = dc.mul(latent_bits, 1.0 / total)
        net_rate = net_bits if cfg.effective_bits == RAW_DEPTH \
            else dc.mul(net_bits, 1.0 / total)

        agg = aggregate(ste_embs, levels, knns, nets_view)
        field_ = predict_deformation(agg, nets_view)
        new_state = apply_deformation(ref_tensors, field_)
        gaussians = decode_attributes(new_state, nets_view)
        img = render_ortho(gaussians, self.camera, target.shape[0],
                           target.shape[1])
        loss = rd_loss(img, target, latent_rate, net_rate, cfg, frame_type)
        loss = dc.add(loss, model_rate)
        return loss, float(latent_bits.data), float(net_bits.data)

    def _final_estimates(self, latents, etas, frame_type, rng, draws=4):
        """Noise-proxy codelength estimates after training (no gradients).

        The latent estimate evaluates the proxy at the coded lattice points:
        the fractional residue of a trained embedding never reaches the
        stream (rounding precedes both rendering and coding), so the
        transmitted state is the rounded one.
        """
        lat = 0.0
        net = 0.0
        for _ in range(draws):
            for r, emb in enumerate(latents):
                noisy = dc.add(dc.Tensor(np.rint(emb.data)), dc.Tensor(
                    rng.uniform(-0.5, 0.5, emb.shape)))
                bits, _ = factorized_bits(self.train_nets.factorized[r], noisy)
                lat += float(bits.data)
            if self.cfg.effective_bits != RAW_DEPTH:
                view = _QuantizedView(self.train_nets, self.cfg.effective_bits,
                                      frame_type, self.prev_params, etas, rng)
                net += float(view.net_rate_bits.data)
        return lat / draws, net / draws

    # -- frame and stream drivers ----------------------------------------------

    def encode_frame(self, t: int):
        cfg = self.cfg
        frame_type = self.codec.frame_type(t)
        ref = self.codec.reference(t, self.state, self.last_i_state)
        levels = self.codec.build_levels(ref.positions)
        knns = self.codec.build_knns(levels) if self.spec.use_ila \
            else [None] * len(levels)
        rng = np.random.default_rng(
            [cfg.seed, t, int(cfg.lam * 1e9), 0x7A])
        if cfg.warm_start_latents and self.prev_latents is not None and \
                all(p.shape[0] == l.count for p, l in
                    zip(self.prev_latents, levels)):
            latents = [dc.Tensor(p.copy(), requires_grad=True)
                       for p in self.prev_latents]
        else:
            latents = init_latents(levels, self.spec, rng,
                                   scale=cfg.latent_init_std)
        etas = {}
        if frame_type == "P" and cfg.effective_bits != RAW_DEPTH:
            etas = {name: dc.Tensor(np.ones((1, 1)), requires_grad=True)
                    for name in self.train_nets.entries}
        ref_tensors = FrameTensors.from_frame(ref, dtype=np.float64)
        target = dc.Tensor(self.scene.images[t].astype(np.float64))

        head_tensors = [t_ for name, ts in self.train_nets.entries.items()
                        for t_ in ts if name.startswith("head.")]
        other_tensors = [t_ for name, ts in self.train_nets.entries.items()
                         for t_ in ts if not name.startswith("head.")]
        opt = Adam([(latents + head_tensors, cfg.lr),
                    (other_tensors, cfg.lr_nets),
                    (list(etas.values()), cfg.lr_eta)])
        est_lat = est_net = 0.0
        for it in range(cfg.iterations):
            loss, est_lat, est_net = self._iteration(
                ref_tensors, levels, knns, latents, etas, target, frame_type, rng)
            if not np.isfinite(loss.data):
                raise TrainingDivergence(it, cfg.lam)
            loss.backward()
            opt.step()
            opt.zero_grad()
        if cfg.iterations > 0:
            est_lat, est_net = self._final_estimates(latents, etas, frame_type, rng)

        params = NetworkParams.from_nets(self.train_nets)
        eta_list = [float(etas[name].data) for name in self.train_nets.entries] \
            if etas else None
        chunk, decoded = self.codec.encode_frame(
            t, ref, levels, [e.data for e in latents], params,
            self.prev_params, eta_list)

        img = render_state(decoded.state, decoded.nets, self.camera,
                           self.scene.images.shape[1], self.scene.images.shape[2])
        target32 = self.scene.images[t]
        row = FrameReport(
            frame=t, frame_type=frame_type,
            latent_bits_est=est_lat,
            latent_bits_actual=8.0 * chunk.latent_bytes(),
            net_bits_est=est_net,
            net_bits_actual=8.0 * chunk.net_bytes(),
            chunk_bytes=chunk.serialized_size(),
            psnr=psnr(img, target32), ssim=ssim_value(img, target32),
        )
        self.prev_latents = [e.data.copy() for e in latents]
        return chunk, decoded, row

    def encode(self) -> tuple[bytes, "RateReport"]:
        scene = self.scene
        initial_payload = initial_frame_to_bytes(scene.initial)
        report = RateReport()
        report.rows.append(FrameReport(
            frame=0, frame_type="I", latent_bits_est=0.0,
            latent_bits_actual=0.0, net_bits_est=0.0, net_bits_actual=0.0,
            chunk_bytes=len(initial_payload), psnr=None, ssim=None))
        chunks = []
        for t in range(1, scene.frame_count):
            chunk, decoded, row = self.encode_frame(t)
            chunks.append(chunk)
            report.rows.append(row)
            self.state = decoded.state
            self.prev_params = decoded.params
            if chunk.frame_type == "I":
                self.last_i_state = decoded.state
        header = StreamHeader(
            frame_count=scene.frame_count,
            anchor_count=scene.initial.anchor_count,
            offsets_m=self.spec.offsets_per_anchor,
            feat_d=self.spec.feat_dim,
            channels=self.spec.channels,
            scales=self.spec.effective_scales,
            bit_depth=self.cfg.effective_bits,
            t_gop=self.cfg.t_gop,
            layout_digest=self.codec.digest,
            initial_len=len(initial_payload),
        )
        return write_stream(header, initial_payload, chunks), report


@dataclass
class DecodedStream:
    header: StreamHeader
    spec: object
    states: list            # index 0 is the initial frame
    nets: list               # per coded frame ([0] is None)
    frame_ok: list[bool]
    chunks: list


def decode_stream(data: bytes, spec=None, resilient: bool = False) -> DecodedStream:
    """Decode a full stream.

    With ``resilient`` set, chunk-level failures mark frames bad until the
    next I frame instead of raising; the state chain resynchronizes there.
    """
    header, initial, chunk_iter = read_stream(data)
    spec = spec or spec_from_header(header)
    codec = FrameCodec(spec, header.bit_depth, header.t_gop)
    if codec.digest != header.layout_digest:
        raise StreamError("stream digest does not match the decoder layout")
    state = initial
    last_i = initial
    prev_params = NetworkParams.from_nets(default_networks(spec, requires_grad=False))
    states = [initial]
    nets = [None]
    oks = [True]
    chunks = []
    chain_ok = True
    while True:
        try:
            chunk = next(chunk_iter)
        except StopIteration:
            break
        except Exception:
            if not resilient:
                raise
            # framing is unrecoverable; everything after is lost
            break
        chunks.append(chunk)
        is_i = chunk.frame_type == "I"
        if not chain_ok and not is_i:
            states.append(None)
            nets.append(None)
            oks.append(False)
            continue
        ref = last_i if is_i else state
        try:
            decoded = codec.decode_frame(chunk, ref, prev_params)
        except Exception:
            if not resilient:
                raise
            chain_ok = False
            states.append(None)
            nets.append(None)
            oks.append(False)
            continue
        state = decoded.state
        prev_params = decoded.params
        if is_i:
            last_i = decoded.state
            chain_ok = True
        states.append(decoded.state)
        nets.append(decoded.nets)
        oks.append(True)
    return DecodedStream(header=header, spec=spec, states=states, nets=nets,
                         frame_ok=oks, chunks=chunks)


def run_stream(scene, cfg: RdConfig) -> tuple[bytes, RateReport]:
    """Encode a scene and verify the decoder reproduces the encoder's states."""
    encoder = StreamEncoder(scene, cfg)
    data, report = encoder.encode()
    decoded = decode_stream(data, spec=cfg.spec)
    for t in range(1, scene.frame_count):
        img = render_state(decoded.states[t], decoded.nets[t], scene.camera,
                           scene.images.shape[1], scene.images.shape[2])
        p = psnr(img, scene.images[t])
        if p != report.rows[t].psnr:
            raise StreamError(
                f"decoder PSNR {p} != encoder PSNR {report.rows[t].psnr} at frame {t}")
    return data, report
