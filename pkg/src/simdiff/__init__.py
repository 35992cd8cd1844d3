"""Desk-scale pixel-space diffusion: schedules, wavelets, a small autodiff engine, U-ViT, DDPM sampling."""

from .config import RunConfig
from .schedule import ScheduleKind, ScheduleSpec, alpha_sigma, logsnr_cosine, logsnr_interpolated, logsnr_shifted
from .uvit import UViT, UViTConfig

__all__ = [
    "RunConfig",
    "ScheduleKind",
    "ScheduleSpec",
    "UViT",
    "UViTConfig",
    "alpha_sigma",
    "logsnr_cosine",
    "logsnr_interpolated",
    "logsnr_shifted",
]
__version__ = "0.1.0"
