"""Neural-Gaussian frame state, deformation application, attribute decoding,
and a minimal differentiable orthographic splatter.

The renderer projects along one coordinate axis, evaluates every splat's
anisotropic 2D footprint densely over the pixel grid, and alpha-blends
front to back in a single depth order (valid under orthographic projection
because depth is per-splat). Exactness and differentiability are preferred
over speed at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ParameterError, ShapeError
from .latent_model import DeformationField, ModelSpec, TransmittedNets, \
    normalize_quat, quat_to_rotmat

MIN_SCALE = 1e-4          # scene units; degenerate splats are clamped here
_ALPHA_CEIL = 1.0 - 1e-7  # keeps log-transmittance finite at alpha == 1


@dataclass
class NeuralGaussianFrame:
    """Scene state at one timestep: anchors, offsets, features, frozen scalings."""

    positions: np.ndarray   # (n, 3) X
    offsets: np.ndarray     # (n, M, 3) o
    features: np.ndarray    # (n, D) F
    scalings: np.ndarray    # (n, 3) l, bit-identical across a stream
    t: int = 0

    @property
    def anchor_count(self) -> int:
        return self.positions.shape[0]

    @property
    def offsets_per_anchor(self) -> int:
        return self.offsets.shape[1]

    def astype(self, dtype) -> "NeuralGaussianFrame":
        return NeuralGaussianFrame(
            positions=self.positions.astype(dtype),
            offsets=self.offsets.astype(dtype),
            features=self.features.astype(dtype),
            scalings=self.scalings.astype(dtype),
            t=self.t,
        )

    def equals(self, other) -> bool:
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.scalings, other.scalings)
        )


@dataclass
class LocalGaussianSet:
    """Decoded per-splat attributes, one row per managed local Gaussian."""

    mu: dc.Tensor       # (N, 3)
    color: dc.Tensor    # (N, 3) in [0,1]
    alpha: dc.Tensor    # (N, 1) in [0,1]
    scales: dc.Tensor   # (N, 3) > 0
    quat: dc.Tensor     # (N, 4) unit

    @property
    def count(self) -> int:
        return self.mu.shape[0]


@dataclass
class OrthoCamera:
    """Orthographic view along one coordinate axis.

    ``axis`` is the projection axis (depth increases along it); ``extent``
    is the half-width of the viewed square, centered at ``center``.
    """

    axis: int = 2
    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    extent: float = 0.55

    def plane_axes(self) -> tuple[int, int]:
        u, v = [a for a in (0, 1, 2) if a != self.axis]
        return u, v


@dataclass
class FrameTensors:
    """Differentiable view of a frame during training."""

    positions: dc.Tensor
    offsets: dc.Tensor
    features: dc.Tensor
    scalings: np.ndarray   # held constant, never differentiated

    @classmethod
    def from_frame(cls, frame: NeuralGaussianFrame, dtype=np.float64):
        return cls(
            positions=dc.Tensor(frame.positions.astype(dtype)),
            offsets=dc.Tensor(frame.offsets.astype(dtype)),
            features=dc.Tensor(frame.features.astype(dtype)),
            scalings=frame.scalings.astype(dtype),
        )

    def to_frame(self, t: int) -> NeuralGaussianFrame:
        return NeuralGaussianFrame(
            positions=self.positions.data.copy(),
            offsets=self.offsets.data.copy(),
            features=self.features.data.copy(),
            scalings=self.scalings.copy(),
            t=t,
        )


def apply_deformation(prev: FrameTensors, d: DeformationField) -> FrameTensors:
    """Advance the frame state: additive feature/position update, rotated offsets."""
    n, m, _ = prev.offsets.shape
    if d.translation.shape != (n, 3):
        raise ShapeError(f"translation shape {d.translation.shape} != ({n}, 3)")
    feats = dc.add(prev.features, d.d_feat)
    pos = dc.add(prev.positions, d.translation)
    moved = dc.add(prev.offsets, d.d_offsets)
    rot = quat_to_rotmat(d.rotation)             # (n, 3, 3)
    # row-vector offsets: o' = o R^T  <=>  column convention o' = R o
    new_off = dc.bmm(moved, dc.swap_last2(rot))
    return FrameTensors(positions=pos, offsets=new_off, features=feats,
                        scalings=prev.scalings)


def decode_attributes(frame: FrameTensors, nets: TransmittedNets) -> LocalGaussianSet:
    """Decode per-splat attributes from anchor features (view-independent).

    A two-layer MLP maps each anchor's feature to the stacked per-offset
    attribute block; scales are ``scale_ref * exp(2 tanh(raw))`` so they stay
    positive and bounded, opacity and color pass through sigmoids.
    """
    spec = nets.spec
    n = frame.features.shape[0]
    m = spec.offsets_per_anchor
    h = dc.relu(dc.add(dc.matmul(frame.features, nets.entries["attr.l1"][0]),
                       nets.entries["attr.l1"][1]))
    raw = dc.add(dc.matmul(h, nets.entries["attr.l2"][0]), nets.entries["attr.l2"][1])
    per_splat = dc.reshape(raw, (n * m, 11))
    color = dc.sigmoid(dc.slice_cols(per_splat, 0, 3))
    alpha = dc.sigmoid(dc.slice_cols(per_splat, 3, 4))
    scales = dc.mul(dc.exp(dc.mul(dc.tanh(dc.slice_cols(per_splat, 4, 7)), 2.0)),
                    spec.scale_ref)
    quat = normalize_quat(dc.slice_cols(per_splat, 7, 11))

    anchor_of_splat = np.repeat(np.arange(n, dtype=np.int64), m)
    anchor_pos = dc.take_rows(frame.positions, anchor_of_splat)
    l_rep = frame.scalings[anchor_of_splat]      # constant per stream
    off_flat = dc.reshape(frame.offsets, (n * m, 3))
    mu = dc.add(anchor_pos, dc.mul(off_flat, dc.Tensor(l_rep)))
    return LocalGaussianSet(mu=mu, color=color, alpha=alpha, scales=scales,
                            quat=quat)


def _pixel_grid(camera: OrthoCamera, height: int, width: int, dtype):
    u_ax, v_ax = camera.plane_axes()
    cu = camera.center[u_ax]
    cv = camera.center[v_ax]
    half_u = camera.extent
    half_v = camera.extent * height / width
    us = cu - half_u + (np.arange(width) + 0.5) * (2.0 * half_u / width)
    vs = cv + half_v - (np.arange(height) + 0.5) * (2.0 * half_v / height)
    grid_v, grid_u = np.meshgrid(vs, us, indexing="ij")
    return (grid_u.reshape(-1, 1).astype(dtype),
            grid_v.reshape(-1, 1).astype(dtype))


def render_ortho(gaussians: LocalGaussianSet, camera: OrthoCamera,
                 height: int, width: int) -> dc.Tensor:
    """Differentiable orthographic render to an (H, W, 3) image in [0, 1].

    Splats are depth-sorted along the camera axis (ties by index), their 2D
    footprints come from the marginal of Sigma = R S S^T R^T on the image
    plane, and pixels blend front to back.
    """
    if height < 1 or width < 1:
        raise ParameterError("image dims must be positive")
    dtype = gaussians.mu.dtype if gaussians.count else np.float64
    if gaussians.count == 0:
        return dc.Tensor(np.zeros((height, width, 3), dtype=dtype))

    u_ax, v_ax = camera.plane_axes()
    depth = gaussians.mu.data[:, camera.axis]
    order = np.lexsort((np.arange(depth.size), depth)).astype(np.int64)

    mu = dc.take_rows(gaussians.mu, order)
    color = dc.take_rows(gaussians.color, order)
    alpha = dc.take_rows(gaussians.alpha, order)
    scales = dc.clamp_min(dc.take_rows(gaussians.scales, order), MIN_SCALE)
    quat = dc.take_rows(gaussians.quat, order)
    n = gaussians.count

    rot = quat_to_rotmat(quat)                       # (N,3,3)
    a_mat = dc.mul(rot, dc.reshape(scales, (n, 1, 3)))
    cov = dc.bmm(a_mat, dc.swap_last2(a_mat))        # (N,3,3) = R S S^T R^T
    cov_flat = dc.reshape(cov, (n, 9))
    c_uu = dc.slice_cols(cov_flat, 3 * u_ax + u_ax, 3 * u_ax + u_ax + 1)
    c_uv = dc.slice_cols(cov_flat, 3 * u_ax + v_ax, 3 * u_ax + v_ax + 1)
    c_vv = dc.slice_cols(cov_flat, 3 * v_ax + v_ax, 3 * v_ax + v_ax + 1)
    det = dc.clamp_min(dc.sub(dc.mul(c_uu, c_vv), dc.mul(c_uv, c_uv)), 1e-30)
    inv_a = dc.div(c_vv, det)
    inv_b = dc.div(dc.mul(c_uv, -1.0), det)
    inv_c = dc.div(c_uu, det)

    grid_u, grid_v = _pixel_grid(camera, height, width, dtype)
    mu_u = dc.slice_cols(mu, u_ax, u_ax + 1)
    mu_v = dc.slice_cols(mu, v_ax, v_ax + 1)
    foot = dc.splat_alpha(mu_u, mu_v, inv_a, inv_b, inv_c, alpha,
                          grid_u, grid_v)           # (P, N)
    foot = dc.clamp(foot, 0.0, _ALPHA_CEIL)
    trans_log = dc.cumsum_exclusive(dc.log(dc.sub(1.0, foot)), axis=1)
    weights = dc.mul(foot, dc.exp(trans_log))       # blend weights, sum <= 1
    flat = dc.clamp(dc.matmul(weights, color), 0.0, 1.0)
    return dc.reshape(flat, (height, width, 3))


def image_to_u8(image: np.ndarray) -> np.ndarray:
    """8-bit quantization with round half up."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    u8 = image_to_u8(image)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(u8.tobytes())


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(image_to_u8(image), mode="RGB").save(path)
