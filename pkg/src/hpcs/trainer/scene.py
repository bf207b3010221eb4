"""Synthetic dynamic scenes: seeded generation, rendering, binary file I/O.

A scene is an initial neural-Gaussian state plus per-frame ground-truth
images rendered with the canonical default attribute decoder (the same
deterministic initialization the codec starts from, standing in for a
shared initial-frame model). Motion is a per-frame rigid transform of the
anchors with optional feature drift.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from ..bitstream import initial_frame_from_bytes, initial_frame_to_bytes
from ..codec import render_state
from ..deformation import NeuralGaussianFrame, OrthoCamera
from ..errors import FormatError
from ..latent_model import ModelSpec, default_networks

SCENE_MAGIC = b"HPSN"
SCENE_VERSION = 1


@dataclass
class SceneParams:
    seed: int = 0
    anchors: int = 150
    frames: int = 5
    height: int = 48
    width: int = 48
    offsets_per_anchor: int = 4
    feat_dim: int = 16
    rotate_deg: float = 2.0        # per-frame rotation about the view axis
    translate_frac: float = 0.01   # per-frame translation, fraction of extent
    feat_drift: float = 0.01       # per-frame feature noise sigma
    clusters: int = 3              # independently moving rigid groups
    cam_extent: float = 0.55


@dataclass
class SyntheticScene:
    params: SceneParams
    initial: NeuralGaussianFrame       # float32
    camera: OrthoCamera
    images: np.ndarray                 # (T, H, W, 3) float32 targets

    @property
    def frame_count(self) -> int:
        return self.images.shape[0]


def _gt_nets(params: SceneParams):
    spec = ModelSpec(feat_dim=params.feat_dim,
                     offsets_per_anchor=params.offsets_per_anchor)
    return default_networks(spec, dtype=np.float32, requires_grad=False)


def _rigid_step(state: NeuralGaussianFrame, labels: np.ndarray,
                angles: np.ndarray, taus: np.ndarray, drift: np.ndarray,
                t: int) -> NeuralGaussianFrame:
    """Apply one per-cluster rigid transform (rotation about each cluster's
    centroid plus translation) and additive feature drift."""
    pos = state.positions.astype(np.float64)
    off = state.offsets.astype(np.float64)
    if angles.any() or taus.any():
        pos = pos.copy()
        off = off.copy()
        for k in range(angles.size):
            mask = labels == k
            if not mask.any():
                continue
            c, s = np.cos(angles[k]), np.sin(angles[k])
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            center = pos[mask].mean(axis=0)
            pos[mask] = (pos[mask] - center) @ rot.T + center + taus[k]
            off[mask] = off[mask] @ rot.T
    feats = state.features.astype(np.float64) + drift
    return NeuralGaussianFrame(
        positions=pos.astype(np.float32),
        offsets=off.astype(np.float32),
        features=feats.astype(np.float32),
        scalings=state.scalings.copy(),
        t=t,
    )


def _cluster_labels(positions: np.ndarray, clusters: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Spatially coherent grouping: nearest of ``clusters`` sampled centers."""
    if clusters <= 1:
        return np.zeros(positions.shape[0], dtype=np.int64)
    centers = positions[rng.choice(positions.shape[0], size=clusters,
                                   replace=False)]
    d = np.linalg.norm(positions[:, None, :] - centers[None], axis=-1)
    return np.argmin(d, axis=1)


def generate_scene(params: SceneParams) -> SyntheticScene:
    """Deterministic scene from the seed; targets come from the same renderer
    the codec trains against."""
    rng = np.random.default_rng([params.seed, 0x5CE17E])
    n = params.anchors
    m = params.offsets_per_anchor
    d = params.feat_dim
    initial = NeuralGaussianFrame(
        positions=rng.uniform(0.2, 0.8, (n, 3)).astype(np.float32),
        offsets=rng.normal(0.0, 1.0, (n, m, 3)).astype(np.float32),
        features=rng.normal(0.0, 1.0, (n, d)).astype(np.float32),
        scalings=rng.uniform(0.03, 0.09, (n, 3)).astype(np.float32),
        t=0,
    )
    camera = OrthoCamera(axis=2, center=(0.5, 0.5, 0.5), extent=params.cam_extent)
    nets = _gt_nets(params)
    images = np.empty((params.frames, params.height, params.width, 3),
                      dtype=np.float32)
    state = initial
    labels = _cluster_labels(initial.positions.astype(np.float64),
                             params.clusters, rng)
    images[0] = render_state(state, nets, camera, params.height, params.width)
    deg = np.pi / 180.0
    k = max(params.clusters, 1)
    for t in range(1, params.frames):
        angles = params.rotate_deg * deg * rng.uniform(-1.0, 1.0, k) \
            if params.rotate_deg else np.zeros(k)
        taus = rng.uniform(-params.translate_frac, params.translate_frac, (k, 3)) \
            if params.translate_frac else np.zeros((k, 3))
        drift = rng.normal(0.0, params.feat_drift, state.features.shape) \
            if params.feat_drift else np.zeros_like(state.features, dtype=np.float64)
        state = _rigid_step(state, labels, angles, taus, drift, t)
        images[t] = render_state(state, nets, camera, params.height, params.width)
    return SyntheticScene(params=params, initial=initial, camera=camera,
                          images=images)


_PARAM_FMT = "<qIHHHBBBffff"


def scene_to_bytes(scene: SyntheticScene) -> bytes:
    p = scene.params
    out = bytearray(SCENE_MAGIC)
    out += struct.pack("<H", SCENE_VERSION)
    out += struct.pack(_PARAM_FMT, p.seed, p.anchors, p.frames, p.height,
                       p.width, p.offsets_per_anchor, p.feat_dim, p.clusters,
                       np.float32(p.rotate_deg), np.float32(p.translate_frac),
                       np.float32(p.feat_drift), np.float32(p.cam_extent))
    cam = scene.camera
    out += struct.pack("<Bffff", cam.axis, *[np.float32(v) for v in cam.center],
                       np.float32(cam.extent))
    init = initial_frame_to_bytes(scene.initial)
    out += struct.pack("<I", len(init))
    out += init
    out += np.ascontiguousarray(scene.images, dtype="<f4").tobytes()
    return bytes(out)


def scene_from_bytes(data: bytes) -> SyntheticScene:
    if data[:4] != SCENE_MAGIC:
        raise FormatError(f"bad scene magic {data[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<H", data, 4)
    if version != SCENE_VERSION:
        raise FormatError(f"unsupported scene version {version}", offset=4)
    pos = 6
    vals = struct.unpack_from(_PARAM_FMT, data, pos)
    pos += struct.calcsize(_PARAM_FMT)
    p = SceneParams(seed=vals[0], anchors=vals[1], frames=vals[2],
                    height=vals[3], width=vals[4], offsets_per_anchor=vals[5],
                    feat_dim=vals[6], clusters=vals[7], rotate_deg=vals[8],
                    translate_frac=vals[9], feat_drift=vals[10],
                    cam_extent=vals[11])
    axis, cx, cy, cz, ext = struct.unpack_from("<Bffff", data, pos)
    pos += struct.calcsize("<Bffff")
    camera = OrthoCamera(axis=axis, center=(cx, cy, cz), extent=ext)
    (init_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    initial = initial_frame_from_bytes(data[pos:pos + init_len], base_offset=pos)
    pos += init_len
    count = p.frames * p.height * p.width * 3
    if len(data) - pos < 4 * count:
        raise FormatError("truncated scene images", offset=len(data))
    images = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
    images = images.reshape(p.frames, p.height, p.width, 3).astype(np.float32)
    return SyntheticScene(params=p, initial=initial, camera=camera, images=images)


def save_scene(path, scene: SyntheticScene) -> None:
    with open(path, "wb") as f:
        f.write(scene_to_bytes(scene))


def load_scene(path) -> SyntheticScene:
    with open(path, "rb") as f:
        return scene_from_bytes(f.read())
