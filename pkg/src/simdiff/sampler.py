"""Ancestral DDPM sampling in logSNR time with classifier-free guidance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .schedule import ScheduleSpec, alpha_sigma, log_sigmoid

# v_fn(z[B,...], logsnr float, class_ids[B] | None) -> v prediction as a numpy array
VFn = Callable[[np.ndarray, float, "np.ndarray | None"], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 128
    noise_param: float = 0.2
    guidance_scale: float = 1.0
    lowest_idx: int = 1
    clip: str = "static"
    verbatim_lvar: bool = False

    def __post_init__(self):
        if self.num_steps < 2:
            raise ValueError("num_steps must be >= 2")
        if not 0.0 <= self.noise_param <= 1.0:
            raise ValueError("noise_param must lie in [0, 1]")
        if self.guidance_scale < 1.0:
            raise ValueError("guidance_scale is reported as 1 + eta and must be >= 1")
        if self.lowest_idx not in (0, 1):
            raise ValueError("lowest_idx must be 0 or 1")
        if self.clip != "static":
            raise ValueError("only static clipping is supported")


def clip_x(x):
    return np.clip(x, -1.0, 1.0)


@dataclass(frozen=True)
class StepCoeffs:
    coef_z: float
    coef_x: float
    min_lvar: float
    max_lvar: float
    lvar: float

    @property
    def var(self) -> float:
        return math.exp(self.lvar)


def ddpm_step_coeffs(logsnr_t: float, logsnr_s: float, noise_param: float,
                     verbatim_lvar: bool = False) -> StepCoeffs:
    """Mean coefficients and log-variance of one ancestral step from logsnr_t to logsnr_s."""
    if not logsnr_s > logsnr_t:
        raise ValueError(f"need logsnr_s > logsnr_t, got {logsnr_s} <= {logsnr_t}")
    a_t = float(alpha_sigma(logsnr_t).alpha)
    a_s = float(alpha_sigma(logsnr_s).alpha)
    r = math.exp(logsnr_t - logsnr_s)
    one_minus_r = -math.expm1(logsnr_t - logsnr_s)
    base = one_minus_r if verbatim_lvar else math.log(one_minus_r)
    min_lvar = base + float(log_sigmoid(-logsnr_s))
    max_lvar = base + float(log_sigmoid(-logsnr_t))
    lvar = noise_param * max_lvar + (1.0 - noise_param) * min_lvar
    return StepCoeffs(coef_z=r * a_s / a_t, coef_x=one_minus_r * a_s,
                      min_lvar=min_lvar, max_lvar=max_lvar, lvar=lvar)


def predict_x(z_t, v_pred, logsnr_t: float):
    ab = alpha_sigma(logsnr_t)
    return ab.alpha * z_t - ab.sigma * v_pred


def ddpm_step(z_t, v_pred, logsnr_t: float, logsnr_s: float, noise_param: float,
              rng: np.random.Generator, verbatim_lvar: bool = False):
    z_t = np.asarray(z_t)
    c = ddpm_step_coeffs(logsnr_t, logsnr_s, noise_param, verbatim_lvar)
    x_pred = clip_x(predict_x(z_t, v_pred, logsnr_t))
    mu = c.coef_z * z_t + c.coef_x * x_pred
    noise = rng.standard_normal(z_t.shape)
    out = mu + math.exp(0.5 * c.lvar) * noise
    return out.astype(z_t.dtype, copy=False)


def cfg_combine(pred_cond, pred_uncond, eta: float):
    """(1 + eta) * cond - eta * uncond."""
    pred_cond, pred_uncond = np.asarray(pred_cond), np.asarray(pred_uncond)
    if pred_cond.shape != pred_uncond.shape:
        raise ValueError("conditional and unconditional predictions must match in shape")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta == 0:
        return pred_cond
    return (1.0 + eta) * pred_cond - eta * pred_uncond


def guided_v(v_fn: VFn, z, logsnr: float, class_ids, guidance_scale: float, null_id: int):
    eta = guidance_scale - 1.0
    if eta == 0.0 or class_ids is None:
        return v_fn(z, logsnr, class_ids)
    b = z.shape[0]
    ids = np.concatenate([np.asarray(class_ids, dtype=np.int64), np.full(b, null_id, dtype=np.int64)])
    both = v_fn(np.concatenate([z, z]), logsnr, ids)
    return cfg_combine(both[:b], both[b:], eta)


def sample(v_fn: VFn, schedule: ScheduleSpec, cfg: SamplerConfig, shape, class_ids=None,
           rng: np.random.Generator | None = None, *, null_id: int = -1, trace: list | None = None):
    """Draw samples by ancestral DDPM from t=1 down to lowest_idx/num_steps, then take the mean x.

    ``trace``, when given, receives (logsnr_t, logsnr_s, StepCoeffs) per step.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if class_ids is not None:
        class_ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (shape[0],))
    z = rng.standard_normal(shape).astype(np.float32)
    n = cfg.num_steps
    for i in reversed(range(cfg.lowest_idx + 1, n + 1)):
        logsnr_t = float(schedule.logsnr(i / n))
        logsnr_s = float(schedule.logsnr((i - 1) / n))
        v = guided_v(v_fn, z, logsnr_t, class_ids, cfg.guidance_scale, null_id)
        if trace is not None:
            trace.append((logsnr_t, logsnr_s,
                          ddpm_step_coeffs(logsnr_t, logsnr_s, cfg.noise_param, cfg.verbatim_lvar)))
        z = ddpm_step(z, v, logsnr_t, logsnr_s, cfg.noise_param, rng, cfg.verbatim_lvar)
    logsnr_low = float(schedule.logsnr(cfg.lowest_idx / n))
    v = guided_v(v_fn, z, logsnr_low, class_ids, cfg.guidance_scale, null_id)
    return clip_x(predict_x(z, v, logsnr_low)).astype(np.float32)


def model_v_fn(model, params) -> VFn:
    """Adapt a U-ViT and its parameters to the sampler's v_fn interface."""
    def v_fn(z, logsnr, class_ids):
        return model.apply(params, z, np.full(z.shape[0], logsnr), class_ids).data
    return v_fn


def to_uint8(x) -> np.ndarray:
    """[-1, 1] floats -> 8-bit, round(255 * (x + 1) / 2), clamped."""
    return np.clip(np.round(255.0 * (np.asarray(x, dtype=np.float64) + 1.0) / 2.0), 0, 255).astype(np.uint8)
