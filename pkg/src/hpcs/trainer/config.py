"""Rate-distortion run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from ..latent_model import ModelSpec
from ..netcodec import QUANT_DEPTHS, RAW_DEPTH
from ..errors import ParameterError


@dataclass
class RdConfig:
    """Everything one encoding run depends on besides the scene itself."""

    lam: float = 0.01            # rate weight in the RD objective
    lam_ssim: float = 0.2
    iterations: int = 500
    lr: float = 2e-3             # latents and prediction heads
    lr_nets: float = 5e-4        # shared networks (slowly varying across frames)
    lr_eta: float = 1e-4
    seed: int = 0
    bits: int = 8
    t_gop: int = 5
    use_nnc: bool = True         # entropy-coded network parameters
    latent_init_std: float = 0.01
    warm_start_latents: bool = False
    spec: ModelSpec = field(default_factory=ModelSpec)

    def __post_init__(self):
        if self.lam <= 0:
            raise ParameterError("lambda must be positive")
        if self.bits not in QUANT_DEPTHS + (RAW_DEPTH,):
            raise ParameterError(f"bits must be in {QUANT_DEPTHS + (RAW_DEPTH,)}")

    @property
    def effective_bits(self) -> int:
        """Raw float32 parameter storage when network compression is off."""
        return RAW_DEPTH if not self.use_nnc else self.bits

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = asdict(self.spec)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RdConfig":
        d = dict(d)
        spec = d.pop("spec", {})
        cfg = cls(**d)
        cfg.spec = ModelSpec(**spec) if isinstance(spec, dict) else spec
        return cfg
