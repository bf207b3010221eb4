"""The rate-distortion objective."""

from __future__ import annotations

from .. import diffcore as dc
from .metrics import ssim


def distortion(rendered: dc.Tensor, target: dc.Tensor, lam_ssim: float) -> dc.Tensor:
    """L1 plus weighted structural dissimilarity."""
    l1 = dc.mean_all(dc.absval(dc.sub(rendered, target)))
    if lam_ssim == 0.0:
        return l1
    dssim = dc.sub(1.0, ssim(rendered, target))
    return dc.add(l1, dc.mul(dssim, lam_ssim))


def rd_loss(rendered: dc.Tensor, target: dc.Tensor,
            est_bits_latent: dc.Tensor, est_bits_net: dc.Tensor,
            cfg, frame_type: str) -> dc.Tensor:
    """lambda * (latent rate + network rate) + distortion.

    The rate terms are mean codelengths per element (I frames carry the
    full-parameter rate, P frames the residual rate; the caller passes the
    matching estimate). Larger lambda trades quality for fewer bits.
    """
    rate = dc.add(est_bits_latent, est_bits_net)
    dist = distortion(rendered, target, cfg.lam_ssim)
    return dc.add(dc.mul(rate, cfg.lam), dist)
