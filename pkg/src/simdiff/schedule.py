"""logSNR noise schedules and the Gaussian diffusion coefficients derived from them.

Time runs from t=0 (clean data) to t=1 (pure noise). Everything here works in
float64; callers convert to float32 when building tensors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_LOGSNR_MIN = -15.0
DEFAULT_LOGSNR_MAX = 15.0
ELBO_FD_STEP = 1e-5


class ScheduleKind(str, enum.Enum):
    COSINE = "cosine"
    SHIFTED = "shifted"
    INTERPOLATED = "interpolated"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ScheduleSpec:
    """A logSNR schedule: cosine, resolution-shifted cosine, or a blend of two shifts.

    ``bounded=False`` drops the logsnr_min/max boundary handling and yields the
    plain ``-2 log tan(pi t / 2)`` curve (infinite at both ends).
    ``interp_main_text=True`` swaps which shift anchors t=0 in the interpolated form.
    """

    kind: ScheduleKind = ScheduleKind.COSINE
    logsnr_min: float = DEFAULT_LOGSNR_MIN
    logsnr_max: float = DEFAULT_LOGSNR_MAX
    image_d: int = 64
    noise_d: int = 64
    noise_d_low: int = 32
    noise_d_high: int = 64
    bounded: bool = True
    interp_main_text: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not self.logsnr_min < self.logsnr_max:
            raise ValueError(f"logsnr_min ({self.logsnr_min}) must be < logsnr_max ({self.logsnr_max})")
        dims = {"image_d": self.image_d}
        if self.kind is ScheduleKind.SHIFTED:
            dims["noise_d"] = self.noise_d
        if self.kind is ScheduleKind.INTERPOLATED:
            dims.update(noise_d_low=self.noise_d_low, noise_d_high=self.noise_d_high)
            if not self.noise_d_low < self.noise_d_high:
                raise ValueError("noise_d_low must be < noise_d_high")
        for name, value in dims.items():
            if not _is_pow2(int(value)):
                raise ValueError(f"{name}={value} must be a power of two")

    def logsnr(self, t):
        if self.kind is ScheduleKind.COSINE:
            if self.bounded:
                return logsnr_cosine(t, self.logsnr_min, self.logsnr_max)
            return logsnr_cosine_unbounded(t)
        if self.kind is ScheduleKind.SHIFTED:
            return logsnr_shifted(t, self.image_d, self.noise_d, self.logsnr_min, self.logsnr_max)
        low, high = self.noise_d_low, self.noise_d_high
        if self.interp_main_text:
            low, high = high, low
        return logsnr_interpolated(t, self.image_d, low, high, self.logsnr_min, self.logsnr_max)

    def alpha_sigma(self, t) -> "AlphaSigma":
        return alpha_sigma(self.logsnr(t))

    def endpoints(self) -> tuple[float, float]:
        """(lowest, highest) logSNR actually attained over t in [0, 1]; shifts included."""
        a, b = float(self.logsnr(0.0)), float(self.logsnr(1.0))
        return min(a, b), max(a, b)


@dataclass(frozen=True)
class AlphaSigma:
    alpha: np.ndarray | float
    sigma: np.ndarray | float


@dataclass(frozen=True)
class TransitionCoeffs:
    alpha_ts: float
    sigma_ts_sq: float


@dataclass(frozen=True)
class PosteriorCoeffs:
    coef_z: float
    coef_x: float
    var: float


def _check_unit(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0) or np.any(np.isnan(t)):
        raise ValueError("t must lie in [0, 1]")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def logsnr_cosine(t, logsnr_min=DEFAULT_LOGSNR_MIN, logsnr_max=DEFAULT_LOGSNR_MAX):
    t = _check_unit(t)
    if not logsnr_min < logsnr_max:
        raise ValueError("logsnr_min must be < logsnr_max")
    t_min = math.atan(math.exp(-0.5 * logsnr_max))
    t_max = math.atan(math.exp(-0.5 * logsnr_min))
    out = -2.0 * np.log(np.tan(t_min + t * (t_max - t_min)))
    # pin the endpoints; tan/atan round-trips are off by a few ulps otherwise
    out = np.where(t == 0.0, logsnr_max, out)
    out = np.where(t == 1.0, logsnr_min, out)
    return _out(out)


def logsnr_cosine_unbounded(t):
    t = _check_unit(t)
    with np.errstate(divide="ignore"):
        return _out(-2.0 * np.log(np.tan(0.5 * np.pi * t)))


def logsnr_shifted(t, image_d, noise_d, logsnr_min=DEFAULT_LOGSNR_MIN, logsnr_max=DEFAULT_LOGSNR_MAX):
    image_d, noise_d = np.asarray(image_d, dtype=np.float64), np.asarray(noise_d, dtype=np.float64)
    if np.any(image_d <= 0) or np.any(noise_d <= 0):
        raise ValueError("image_d and noise_d must be positive")
    return _out(logsnr_cosine(t, logsnr_min, logsnr_max) + 2.0 * np.log(noise_d / image_d))


def logsnr_interpolated(t, image_d, noise_d_low, noise_d_high,
                        logsnr_min=DEFAULT_LOGSNR_MIN, logsnr_max=DEFAULT_LOGSNR_MAX):
    t = _check_unit(t)
    low = logsnr_shifted(t, image_d, noise_d_low, logsnr_min, logsnr_max)
    high = logsnr_shifted(t, image_d, noise_d_high, logsnr_min, logsnr_max)
    return _out(t * low + (1.0 - t) * high)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return _out(-np.logaddexp(0.0, -x))


def alpha_sigma(logsnr) -> AlphaSigma:
    logsnr = np.asarray(logsnr, dtype=np.float64)
    return AlphaSigma(alpha=_out(np.sqrt(_sigmoid(logsnr))), sigma=_out(np.sqrt(_sigmoid(-logsnr))))


def snr_at_pooled_resolution(snr, s: int):
    """SNR seen after s x s average pooling of i.i.d. pixel noise."""
    if int(s) != s or s < 1:
        raise ValueError("pooling factor must be an integer >= 1")
    return snr * s * s


def elbo_weight(schedule: ScheduleSpec, t):
    """-d/dt logSNR(t). Analytic for the boundary-free cosine, central differences otherwise."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError("elbo_weight is defined on the open interval (0, 1)")
    if schedule.kind is ScheduleKind.COSINE and not schedule.bounded:
        return _out(2.0 * np.pi / np.sin(np.pi * t))
    h = np.minimum(ELBO_FD_STEP, np.minimum(t, 1.0 - t) / 2)
    hi = np.asarray(schedule.logsnr(t + h))
    lo = np.asarray(schedule.logsnr(t - h))
    return _out(-(hi - lo) / (2.0 * h))


def _transition_from_logsnr(logsnr_s, logsnr_t) -> TransitionCoeffs:
    a_s, s_s = alpha_sigma(logsnr_s).alpha, alpha_sigma(logsnr_s).sigma
    a_t = alpha_sigma(logsnr_t).alpha
    alpha_ts = a_t / a_s
    # sigma_t^2 - alpha_ts^2 sigma_s^2 == sigma_t^2 (1 - SNR_t / SNR_s); the second form avoids cancellation
    sigma_ts_sq = float(_sigmoid(-logsnr_t)) * float(-np.expm1(logsnr_t - logsnr_s))
    return TransitionCoeffs(alpha_ts=float(alpha_ts), sigma_ts_sq=max(sigma_ts_sq, 0.0))


def _check_order(s, t, allow_zero_s: bool):
    if not 0.0 <= s <= 1.0 or not 0.0 <= t <= 1.0:
        raise ValueError("s and t must lie in [0, 1]")
    if s >= t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    if not allow_zero_s and s <= 0.0:
        raise ValueError("posterior needs s > 0")


def transition_coeffs(schedule: ScheduleSpec, s: float, t: float) -> TransitionCoeffs:
    """Coefficients of q(z_t | z_s) for s < t."""
    _check_order(s, t, allow_zero_s=True)
    return _transition_from_logsnr(float(schedule.logsnr(s)), float(schedule.logsnr(t)))


def posterior_from_logsnr(logsnr_s: float, logsnr_t: float) -> PosteriorCoeffs:
    if not logsnr_s > logsnr_t:
        raise ValueError("need logsnr_s > logsnr_t")
    tr = _transition_from_logsnr(logsnr_s, logsnr_t)
    a_s = float(alpha_sigma(logsnr_s).alpha)
    var_s = float(_sigmoid(-logsnr_s))
    var_t = float(_sigmoid(-logsnr_t))
    return PosteriorCoeffs(
        coef_z=tr.alpha_ts * var_s / var_t,
        coef_x=a_s * tr.sigma_ts_sq / var_t,
        var=tr.sigma_ts_sq * var_s / var_t,
    )


def posterior_coeffs(schedule: ScheduleSpec, s: float, t: float) -> PosteriorCoeffs:
    """Mean coefficients and variance of q(z_s | z_t, x) for 0 < s < t <= 1."""
    _check_order(s, t, allow_zero_s=False)
    return posterior_from_logsnr(float(schedule.logsnr(s)), float(schedule.logsnr(t)))
