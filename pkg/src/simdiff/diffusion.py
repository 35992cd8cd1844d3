"""Forward process, prediction-space conversions and training losses."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import Tensor, ops
from .engine.tensor import as_tensor
from .schedule import ScheduleSpec, alpha_sigma, elbo_weight

# model_fn(z_t, logsnr[B], class_ids[B] | None, rng) -> v prediction tensor
ModelFn = Callable[[np.ndarray, np.ndarray, "np.ndarray | None", "np.random.Generator | None"], Tensor]


class Parametrization(str, enum.Enum):
    EPSILON = "eps"
    V = "v"
    X = "x"


class LossTarget(str, enum.Enum):
    EPS_MSE = "eps_mse"
    V_MSE = "v_mse"


@dataclass(frozen=True)
class LossConfig:
    target: LossTarget = LossTarget.V_MSE
    multiscale: bool = False
    base_resolution: int = 32
    weighting: str = "none"  # none | elbo

    def __post_init__(self):
        object.__setattr__(self, "target", LossTarget(self.target))
        if self.weighting not in ("none", "elbo"):
            raise ValueError(f"unknown loss weighting {self.weighting!r}")

    def resolutions(self, d: int) -> list[int]:
        """{base, 2*base, ..., d}; just {d} when d <= base."""
        if not self.multiscale or d <= self.base_resolution:
            return [d]
        if d % self.base_resolution or (d // self.base_resolution) & (d // self.base_resolution - 1):
            raise ValueError(f"resolution {d} is not a power-of-two multiple of {self.base_resolution}")
        out, s = [], self.base_resolution
        while s <= d:
            out.append(s)
            s *= 2
        return out


def _bcast(a, ndim: int):
    """Per-example coefficients [B] -> [B, 1, 1, 1]; scalars pass through."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


def diffuse(x, alpha, sigma, eps):
    """z_t = alpha * x + sigma * eps. Works on numpy arrays and Tensors."""
    if np.shape(x) != np.shape(eps):
        raise ValueError(f"x {np.shape(x)} and eps {np.shape(eps)} must match")
    if isinstance(x, Tensor) or isinstance(eps, Tensor):
        a = _bcast(alpha, len(np.shape(x)))
        s = _bcast(sigma, len(np.shape(x)))
        return ops.add(ops.mul(x, _coef(a)), ops.mul(eps, _coef(s)))
    x = np.asarray(x)
    out = _bcast(alpha, x.ndim) * x + _bcast(sigma, x.ndim) * np.asarray(eps)
    return out.astype(x.dtype, copy=False) if np.issubdtype(x.dtype, np.floating) else out


def _coef(c):
    return c if isinstance(c, float) else Tensor(c)


def _lin(a, p, b, q):
    """a*p + b*q for numpy or Tensor operands p, q and coefficient arrays a, b."""
    if isinstance(p, Tensor) or isinstance(q, Tensor):
        return ops.add(ops.mul(p, _coef(a)), ops.mul(q, _coef(b)))
    return a * np.asarray(p) + b * np.asarray(q)


def convert(pred, src: Parametrization, dst: Parametrization, z_t, alpha, sigma):
    """Convert a prediction between eps, v and x spaces given z_t and (alpha, sigma)."""
    src, dst = Parametrization(src), Parametrization(dst)
    if src is dst:
        return pred
    nd = len(np.shape(z_t))
    a, s = _bcast(alpha, nd), _bcast(sigma, nd)
    if src is Parametrization.V:
        eps = _lin(s, z_t, a, pred)
        x = _lin(a, z_t, -s, pred)
    elif src is Parametrization.EPSILON:
        if np.any(np.asarray(a) == 0.0):
            raise ZeroDivisionError("eps -> x conversion divides by alpha = 0")
        eps = pred
        x = _lin(1.0 / a, z_t, -s / a, pred)
    else:
        if np.any(np.asarray(s) == 0.0):
            raise ZeroDivisionError("x -> eps conversion divides by sigma = 0")
        x = pred
        eps = _lin(1.0 / s, z_t, -a / s, pred)
    if dst is Parametrization.EPSILON:
        return eps
    if dst is Parametrization.X:
        return x
    return _lin(a, eps, -s, x)


def v_target(x, eps, alpha, sigma):
    nd = len(np.shape(x))
    return _lin(_bcast(alpha, nd), eps, -_bcast(sigma, nd), x)


def multiscale_loss(eps, eps_hat, resolutions, per_example_weight=None) -> Tensor:
    """Sum over resolutions s of (1/s) * per-pixel MSE between s x s average-pooled maps."""
    eps, eps_hat = as_tensor(eps), as_tensor(eps_hat)
    if eps.shape != eps_hat.shape:
        raise ValueError("eps and eps_hat must have the same shape")
    d = eps.shape[-2]
    if eps.shape[-3] != d:
        raise ValueError("multiscale loss expects square images")
    if max(resolutions) != d:
        raise ValueError(f"the largest resolution must equal the native resolution {d}")
    resid = ops.sub(eps, eps_hat)
    total = None
    for s in sorted(resolutions):
        if d % s:
            raise ValueError(f"resolution {s} does not divide {d}")
        pooled = ops.avg_pool2d(resid, d // s)
        term = ops.mul(_weighted_mean(ops.square(pooled), per_example_weight), 1.0 / s)
        total = term if total is None else ops.add(total, term)
    return total


def _weighted_mean(sq: Tensor, per_example_weight) -> Tensor:
    if per_example_weight is None:
        return ops.mean(sq)
    w = np.asarray(per_example_weight, dtype=np.float64).reshape((-1,) + (1,) * (sq.ndim - 1))
    return ops.mean(ops.mul(sq, Tensor(w)))


@dataclass
class LossAux:
    t: np.ndarray
    logsnr: np.ndarray
    class_ids: np.ndarray | None
    dropped: np.ndarray | None = field(default=None)


def drop_conditioning(class_ids, rate: float, null_id: int, rng: np.random.Generator):
    if class_ids is None:
        return None, None
    ids = np.asarray(class_ids, dtype=np.int64).copy()
    dropped = rng.random(ids.shape) < rate
    ids[dropped] = null_id
    return ids, dropped


def training_loss(x, class_ids, model_fn: ModelFn, schedule: ScheduleSpec, loss_cfg: LossConfig,
                  rng: np.random.Generator, *, cond_dropout: float = 0.1, null_id: int = -1):
    """Monte-Carlo diffusion loss for a batch ``x`` in [-1, 1] of shape [B, H, W, C].

    Draws t ~ U(0, 1) and eps ~ N(0, I) per example, swaps conditioning for the
    null id with probability ``cond_dropout``, and compares the model's v
    prediction to the target in eps or v space. Returns (loss tensor, aux).
    """
    x = np.asarray(x, dtype=np.float32)
    b = x.shape[0]
    t = rng.uniform(0.0, 1.0, size=b)
    eps = rng.standard_normal(x.shape).astype(np.float32)
    ids, dropped = drop_conditioning(class_ids, cond_dropout, null_id, rng)
    logsnr = np.asarray(schedule.logsnr(t), dtype=np.float64)
    ab = alpha_sigma(logsnr)
    alpha, sigma = np.asarray(ab.alpha), np.asarray(ab.sigma)
    z = diffuse(x, alpha, sigma, eps)
    v_pred = model_fn(z, logsnr, ids, rng)
    if loss_cfg.target is LossTarget.V_MSE:
        pred = v_pred
        target = v_target(x, eps, alpha, sigma).astype(np.float32)
    else:
        pred = convert(v_pred, Parametrization.V, Parametrization.EPSILON, z, alpha, sigma)
        target = eps
    weight = None
    if loss_cfg.weighting == "elbo":
        weight = elbo_weight(schedule, np.clip(t, 1e-6, 1 - 1e-6))
    d = x.shape[1]
    if loss_cfg.multiscale:
        loss = multiscale_loss(target, pred, loss_cfg.resolutions(d), weight)
    else:
        loss = _weighted_mean(ops.square(ops.sub(pred, Tensor(target))), weight)
    return loss, LossAux(t=t, logsnr=logsnr, class_ids=ids, dropped=dropped)


def init_loss_oracle(x_batches, schedule: ScheduleSpec, num_t: int = 200_000, seed: int = 0) -> float:
    """E||alpha eps - sigma x||^2 per element for a model predicting v = 0.

    With eps independent of x this is E[alpha^2] + E[sigma^2] * E[x^2]; both
    expectations over t ~ U(0, 1) are estimated by Monte Carlo.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, size=num_t)
    ab = alpha_sigma(schedule.logsnr(t))
    ex2 = float(np.mean(np.square(np.asarray(x_batches, dtype=np.float64))))
    return float(np.mean(np.square(ab.alpha)) + np.mean(np.square(ab.sigma)) * ex2)
