"""Flat ``key = value`` run configuration shared by training and sampling.

Lists are comma-separated integers; ``#`` starts a comment. Every key has a
desk-scale default; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .diffusion import LossConfig
from .sampler import SamplerConfig
from .schedule import ScheduleKind, ScheduleSpec
from .uvit import Patching, UViTConfig

DEFAULTS: dict[str, Any] = {
    # data
    "dataset": "gaussian_blobs",  # gaussian_blobs | checker | two_tone | folder
    "data_path": "",
    "resolution": 16,
    "channels": 1,
    "num_classes": 4,
    # schedule
    "schedule": "cosine",  # cosine | shifted | interpolated
    "logsnr_min": -15.0,
    "logsnr_max": 15.0,
    "noise_d": 32,
    "noise_d_low": 32,
    "noise_d_high": 64,
    "interp_main_text": False,
    # network
    "base_channels": 32,
    "emb_channels": 64,
    "channel_multiplier": (1, 2, 2),
    "num_res_blocks": (1, 1),
    "num_transformer_blocks": 2,
    "num_heads": 4,
    "expansion_factor": 4,
    "transformer_dropout": 0.2,
    "dropout": 0.0,
    "dropout_from_resolution": 16,
    "patching": "none",
    "mlp_first": True,
    # loss
    "loss_target": "v_mse",
    "multiscale": False,
    "multiscale_base": 32,
    "loss_weighting": "none",
    # optimization
    "batch_size": 32,
    "learning_rate": 1e-4,
    "warmup_steps": 10_000,
    "adam_beta1": 0.9,
    "adam_beta2": 0.99,
    "adam_eps": 1e-12,
    "ema_decay": 0.9999,
    "grad_clip": 1.0,
    "num_train_steps": 1000,
    "cond_dropout": 0.1,
    "seed": 0,
    "checkpoint_every": 1000,
    # sampling
    "sample_steps": 128,
    "noise_param": 0.2,
    "guidance_scale": 1.0,
    "lowest_idx": 1,
    "verbatim_lvar": False,
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw.replace("_", ""))
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw) -> None:
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            cfg.set(key, raw)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())

    def apply_overrides(self, pairs) -> "RunConfig":
        for pair in pairs or ():
            if "=" not in pair:
                raise ConfigError(f"override must be key=value, got {pair!r}")
            key, raw = pair.split("=", 1)
            self.set(key, raw)
        return self

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in DEFAULTS)

    # typed views -------------------------------------------------------

    def schedule(self) -> ScheduleSpec:
        v = self.values
        return ScheduleSpec(kind=ScheduleKind(v["schedule"]), logsnr_min=v["logsnr_min"],
                            logsnr_max=v["logsnr_max"], image_d=v["resolution"], noise_d=v["noise_d"],
                            noise_d_low=v["noise_d_low"], noise_d_high=v["noise_d_high"],
                            interp_main_text=v["interp_main_text"])

    def model(self) -> UViTConfig:
        v = self.values
        return UViTConfig(
            image_size=v["resolution"], in_channels=v["channels"], base_channels=v["base_channels"],
            emb_channels=v["emb_channels"], channel_multiplier=v["channel_multiplier"],
            num_res_blocks=v["num_res_blocks"], num_transformer_blocks=v["num_transformer_blocks"],
            num_heads=v["num_heads"], expansion_factor=v["expansion_factor"],
            transformer_dropout=v["transformer_dropout"], dropout=v["dropout"],
            dropout_from_resolution=v["dropout_from_resolution"], patching=Patching.parse(v["patching"]),
            num_classes=v["num_classes"], mlp_first=v["mlp_first"])

    def loss(self) -> LossConfig:
        v = self.values
        return LossConfig(target=v["loss_target"], multiscale=v["multiscale"],
                          base_resolution=v["multiscale_base"], weighting=v["loss_weighting"])

    def sampler(self) -> SamplerConfig:
        v = self.values
        return SamplerConfig(num_steps=v["sample_steps"], noise_param=v["noise_param"],
                             guidance_scale=v["guidance_scale"], lowest_idx=v["lowest_idx"],
                             verbatim_lvar=v["verbatim_lvar"])
