"""Per-frame latent embeddings, the two-stage aggregation, and prediction heads.

Aggregation runs in two passes: inner-scale (kNN-weighted fusion of neighbor
embeddings, weights predicted from relative offsets, module shared across
scales) and cross-scale (coarse-to-fine parent-copy upsampling, concat,
fusion MLP per step). The aggregated features feed four heads producing the
deformation parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .entropy.factorized import FactorizedModel
from .errors import ShapeError
from .hierarchy import KnnIndex, ScaleLevel

DEFAULT_INIT_SEED = 12345   # canonical network init shared by coder sides
LATENT_INIT_STD = 0.01


@dataclass
class ModelSpec:
    """Architecture constants; fixed per stream and hashed into the layout digest."""

    channels: int = 16          # latent channels per scale
    scales: int = 3
    knn_k: int = 4
    scale_ratio: float = 0.2
    feat_dim: int = 16          # D
    offsets_per_anchor: int = 4  # M
    hidden: int = 32
    include_self: bool = False
    use_ila: bool = True
    use_cla: bool = True
    scale_ref: float = 0.05     # base size of decoded local-Gaussian scales

    @property
    def effective_scales(self) -> int:
        return self.scales if self.use_cla else 1

    @property
    def agg_channels(self) -> int:
        """Channel count leaving the aggregation stage."""
        return self.hidden if (self.use_cla and self.scales > 1) else self.channels

    @property
    def attr_width(self) -> int:
        # per managed Gaussian: color 3 + opacity 1 + scale 3 + quaternion 4
        return 11 * self.offsets_per_anchor


@dataclass
class DeformationField:
    """Predicted per-anchor deformation of one frame step."""

    d_feat: dc.Tensor    # (n, D)
    translation: dc.Tensor  # (n, 3)
    rotation: dc.Tensor  # (n, 4) unit quaternions
    d_offsets: dc.Tensor  # (n, M, 3)


class TransmittedNets:
    """All networks whose parameters enter the coded stream.

    ``entries`` is an ordered mapping layer-name -> member tensors; that
    order (with shapes) defines the serialized layout. Each tensor is
    registered exactly once.
    """

    def __init__(self, spec: ModelSpec, dtype=np.float64, requires_grad=True,
                 rng: np.random.Generator | None = None):
        self.spec = spec
        self.dtype = dtype
        self.entries: dict[str, list[dc.Tensor]] = {}
        rng = rng or np.random.default_rng(DEFAULT_INIT_SEED)
        s = spec

        def dense(fan_in, fan_out, zero=False):
            if zero:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros((1, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
                b = np.zeros((1, fan_out))
            return [dc.Tensor(w.astype(dtype), requires_grad=requires_grad),
                    dc.Tensor(b.astype(dtype), requires_grad=requires_grad)]

        if s.use_ila:
            self.entries["ila.w1"] = dense(3, 16)
            self.entries["ila.w2"] = dense(16, 1)
            self.entries["ila.out1"] = dense(s.channels, s.hidden)
            self.entries["ila.out2"] = dense(s.hidden, s.channels)
        if s.use_cla and s.scales > 1:
            for i in range(s.scales - 1):
                fan_in = 2 * s.channels if i == 0 else s.hidden + s.channels
                self.entries[f"cla.f{i}.l1"] = dense(fan_in, s.hidden)
                self.entries[f"cla.f{i}.l2"] = dense(s.hidden, s.hidden)
        for head, width in (("feat", s.feat_dim), ("trans", 3),
                            ("rot", 4), ("offs", 3 * s.offsets_per_anchor)):
            self.entries[f"head.{head}.l1"] = dense(s.agg_channels, s.hidden)
            # zero-init final layers give the identity deformation pre-training
            self.entries[f"head.{head}.l2"] = dense(s.hidden, width, zero=True)
        self.entries["attr.l1"] = dense(s.feat_dim, s.hidden)
        self.entries["attr.l2"] = dense(s.hidden, s.attr_width)

        self.factorized: list[FactorizedModel] = []
        for r in range(s.effective_scales):
            fm = FactorizedModel(s.channels, rng=rng)
            for t in fm.param_tensors():
                t.data = t.data.astype(dtype)
                t.requires_grad = requires_grad
            self.entries[f"fact.s{r}"] = fm.param_tensors()
            self.factorized.append(fm)

    # -- parameter views ----------------------------------------------------

    def layer_names(self) -> list[str]:
        return list(self.entries.keys())

    def layer_shapes(self) -> list[list[tuple[int, ...]]]:
        return [[tuple(t.shape) for t in ts] for ts in self.entries.values()]

    def flatten_layer(self, name: str) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.entries[name]])

    def load_layer(self, name: str, flat: np.ndarray) -> None:
        pos = 0
        for t in self.entries[name]:
            nxt = pos + t.size
            t.data = np.ascontiguousarray(
                flat[pos:nxt].reshape(t.shape).astype(self.dtype))
            pos = nxt
        if pos != flat.size:
            raise ShapeError(f"layer {name}: {flat.size} values for {pos} slots")

    def all_tensors(self) -> list[dc.Tensor]:
        return [t for ts in self.entries.values() for t in ts]

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: self.flatten_layer(name) for name in self.entries}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, flat in values.items():
            self.load_layer(name, flat)


def default_networks(spec: ModelSpec, dtype=np.float64,
                     requires_grad=True) -> TransmittedNets:
    """The canonical deterministic initialization (both coder sides agree)."""
    return TransmittedNets(spec, dtype=dtype, requires_grad=requires_grad,
                           rng=np.random.default_rng(DEFAULT_INIT_SEED))


def init_latents(levels: list[ScaleLevel], spec: ModelSpec,
                 rng: np.random.Generator, dtype=np.float64,
                 scale: float = LATENT_INIT_STD) -> list[dc.Tensor]:
    """Fresh near-zero embeddings, one (n_r, C) tensor per scale."""
    return [
        dc.Tensor(rng.normal(0.0, scale, (lvl.count, spec.channels)).astype(dtype),
                  requires_grad=True)
        for lvl in levels
    ]


def _mlp2(x: dc.Tensor, l1, l2) -> dc.Tensor:
    h = dc.relu(dc.add(dc.matmul(x, l1[0]), l1[1]))
    return dc.add(dc.matmul(h, l2[0]), l2[1])


def ila(embeddings: dc.Tensor, knn_index: KnnIndex,
        nets: TransmittedNets) -> dc.Tensor:
    """Inner-scale aggregation: softmax(MLP_w(dX)) weighted neighbor sum, then MLP_out."""
    n, k = knn_index.indices.shape
    if embeddings.shape[0] != n:
        raise ShapeError(
            f"knn built for {n} points but embeddings have {embeddings.shape[0]} rows")
    dx = dc.Tensor(knn_index.flat_offsets.astype(embeddings.dtype))
    logits = _mlp2(dx, nets.entries["ila.w1"], nets.entries["ila.w2"])
    weights = dc.softmax(dc.reshape(logits, (n, k)), axis=1)
    nbr = dc.take_rows(embeddings, knn_index.flat_indices)
    weighted = dc.mul(nbr, dc.reshape(weights, (n * k, 1)))
    fused = dc.segsum_rows(weighted, k)
    return _mlp2(fused, nets.entries["ila.out1"], nets.entries["ila.out2"])


def cla(per_scale: list[dc.Tensor], levels: list[ScaleLevel],
        nets: TransmittedNets) -> dc.Tensor:
    """Cross-scale aggregation: parent-copy upsample, concat, fuse, coarse to fine."""
    if len(per_scale) != len(levels):
        raise ShapeError("one aggregated tensor per scale required")
    if len(per_scale) == 1:
        return per_scale[0]
    cur = per_scale[-1]
    for step, r in enumerate(range(len(per_scale) - 2, -1, -1)):
        parent = levels[r + 1].parent_of_finer
        if parent is None or parent.shape[0] != levels[r].count:
            raise ShapeError(f"missing or mismatched parent map at scale {r + 1}")
        up = dc.take_rows(cur, parent)
        cat = dc.concat([up, per_scale[r]], axis=1)
        cur = _mlp2(cat, nets.entries[f"cla.f{step}.l1"],
                    nets.entries[f"cla.f{step}.l2"])
    return cur


def aggregate(embeddings: list[dc.Tensor], levels: list[ScaleLevel],
              knns: list[KnnIndex], nets: TransmittedNets) -> dc.Tensor:
    """Full aggregation stage; honors the ILA/CLA component toggles."""
    spec = nets.spec
    if spec.use_ila:
        per_scale = [ila(e, ki, nets) for e, ki in zip(embeddings, knns)]
    else:
        per_scale = list(embeddings)
    if spec.use_cla:
        return cla(per_scale, levels, nets)
    return per_scale[0]


def normalize_quat(raw: dc.Tensor) -> dc.Tensor:
    """Unit quaternion from a raw 4-vector.

    The w component is shifted by +1 before normalizing, so an all-zero raw
    row maps exactly to the identity rotation and the map stays smooth there.
    """
    n = raw.shape[0]
    shift = np.zeros((1, 4), dtype=raw.dtype)
    shift[0, 0] = 1.0
    q = dc.add(raw, dc.Tensor(shift))
    nrm = dc.sqrt(dc.rsum(dc.mul(q, q), axis=1, keepdims=True))
    return dc.div(q, nrm)


def quat_to_rotmat(q: dc.Tensor) -> dc.Tensor:
    """Rotation matrices (n,3,3) from unit quaternions (n,4) in (w,x,y,z) order."""
    w = dc.slice_cols(q, 0, 1)
    x = dc.slice_cols(q, 1, 2)
    y = dc.slice_cols(q, 2, 3)
    z = dc.slice_cols(q, 3, 4)
    two = 2.0
    xx, yy, zz = dc.mul(x, x), dc.mul(y, y), dc.mul(z, z)
    xy, xz, yz = dc.mul(x, y), dc.mul(x, z), dc.mul(y, z)
    wx, wy, wz = dc.mul(w, x), dc.mul(w, y), dc.mul(w, z)
    one = 1.0
    entries = [
        dc.add(dc.mul(dc.add(yy, zz), -two), one),
        dc.mul(dc.sub(xy, wz), two),
        dc.mul(dc.add(xz, wy), two),
        dc.mul(dc.add(xy, wz), two),
        dc.add(dc.mul(dc.add(xx, zz), -two), one),
        dc.mul(dc.sub(yz, wx), two),
        dc.mul(dc.sub(xz, wy), two),
        dc.mul(dc.add(yz, wx), two),
        dc.add(dc.mul(dc.add(xx, yy), -two), one),
    ]
    flat = dc.concat(entries, axis=1)
    return dc.reshape(flat, (q.shape[0], 3, 3))


def predict_deformation(aggregated: dc.Tensor,
                        nets: TransmittedNets) -> DeformationField:
    """Run the four prediction heads over per-anchor aggregated features."""
    spec = nets.spec
    n = aggregated.shape[0]
    d_feat = _mlp2(aggregated, nets.entries["head.feat.l1"],
                   nets.entries["head.feat.l2"])
    trans = _mlp2(aggregated, nets.entries["head.trans.l1"],
                  nets.entries["head.trans.l2"])
    raw_q = _mlp2(aggregated, nets.entries["head.rot.l1"],
                  nets.entries["head.rot.l2"])
    d_off = _mlp2(aggregated, nets.entries["head.offs.l1"],
                  nets.entries["head.offs.l2"])
    return DeformationField(
        d_feat=d_feat,
        translation=trans,
        rotation=normalize_quat(raw_q),
        d_offsets=dc.reshape(d_off, (n, spec.offsets_per_anchor, 3)),
    )
