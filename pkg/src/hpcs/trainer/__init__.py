"""Rate-distortion training, synthetic scenes, metrics, streaming drivers."""

from .config import RdConfig
from .loss import distortion, rd_loss
from .loop import (
    DecodedStream,
    FrameReport,
    RateReport,
    StreamEncoder,
    decode_stream,
    run_stream,
)
from .metrics import psnr, ssim, ssim_value
from .optim import Adam
from .scene import (
    SceneParams,
    SyntheticScene,
    generate_scene,
    load_scene,
    save_scene,
    scene_from_bytes,
    scene_to_bytes,
)

__all__ = [
    "RdConfig", "distortion", "rd_loss",
    "DecodedStream", "FrameReport", "RateReport", "StreamEncoder",
    "decode_stream", "run_stream",
    "psnr", "ssim", "ssim_value", "Adam",
    "SceneParams", "SyntheticScene", "generate_scene", "load_scene",
    "save_scene", "scene_from_bytes", "scene_to_bytes",
]
