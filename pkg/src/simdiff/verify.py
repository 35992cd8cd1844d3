"""Self-check suites run by ``simdiff verify`` and ``simdiff grad-check``."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import schedule as S
from . import wavelet as W
from .engine import ops
from .engine.gradcheck import check_gradients
from .imageio import write_pnm
from .sampler import SamplerConfig, cfg_combine, ddpm_step_coeffs, sample, to_uint8
from .uvit import Patching, UViT, UViTConfig

SUITES = ("schedules", "wavelet", "gradients", "sampler", "pooling-law")


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<44s} measured={self.value:.3e}  tol={self.tol:.1e}{extra}"


def _le(name, value, tol, detail=""):
    return Check(name, float(value), tol, bool(np.isfinite(value) and value <= tol), detail)


# ---------------------------------------------------------------------------
# schedules


def suite_schedules(seed: int = 0, **_) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    lo, hi = S.DEFAULT_LOGSNR_MIN, S.DEFAULT_LOGSNR_MAX
    ends = max(abs(S.logsnr_cosine(0.0) - hi), abs(S.logsnr_cosine(1.0) - lo))
    out.append(Check("cosine endpoints exact", ends, 0.0, ends == 0.0))
    out.append(_le("cosine midpoint is 0", abs(S.logsnr_cosine(0.5)), 1e-9))
    t = rng.uniform(0, 1, 10_000)
    d = 2 ** rng.integers(3, 10, 10_000)
    n = 2 ** rng.integers(3, 10, 10_000)
    shift = S.logsnr_shifted(t, d, n) - S.logsnr_cosine(t) - 2 * np.log(n / d)
    out.append(_le("shift identity 2 ln(n/d)", np.max(np.abs(shift)), 1e-12, "10^4 random (t, d, n)"))
    lam = rng.uniform(-20, 20, 1000)
    ab = S.alpha_sigma(lam)
    out.append(_le("variance preserving a^2 + s^2 = 1", np.max(np.abs(ab.alpha ** 2 + ab.sigma ** 2 - 1)), 1e-12))
    spec = S.ScheduleSpec(S.ScheduleKind.SHIFTED, image_d=64, noise_d=32)
    ts = np.linspace(0, 1, 1001)
    out.append(Check("shifted logsnr decreasing in t", 0.0, 0.0, bool(np.all(np.diff(spec.logsnr(ts)) < 0))))
    pc = S.posterior_coeffs(spec, 0.3, 0.5)
    tc = S.transition_coeffs(spec, 0.3, 0.5)
    a_s = S.alpha_sigma(spec.logsnr(0.3))
    a_t = S.alpha_sigma(spec.logsnr(0.5))
    # posterior mean of a point mass must return x: coef_z * alpha_t + coef_x = alpha_s
    err = abs(pc.coef_z * a_t.alpha + pc.coef_x - a_s.alpha)
    out.append(_le("posterior mean consistency", err, 1e-12))
    marg = abs(tc.alpha_ts ** 2 * a_s.sigma ** 2 + tc.sigma_ts_sq - a_t.sigma ** 2)
    out.append(_le("transition composes marginals", marg, 1e-12))
    return out


# ---------------------------------------------------------------------------
# wavelet


def suite_wavelet(seed: int = 0, **_) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        size = int(2 ** rng.integers(3, 8))
        levels = int(rng.integers(1, min(3, int(math.log2(size)) - 1) + 1))
        img = rng.uniform(-1, 1, (size, size, int(rng.choice([1, 3]))))
        rec = W.unpack(W.pack(img, levels), levels)
        worst = max(worst, float(np.max(np.abs(rec - img))))
    out = [_le("DWT roundtrip max-abs error", worst, 1e-5, "100 images up to 128x128x3, levels <= 3")]
    const = np.full((32, 32, 3), 0.37)
    packed = W.pack(const, 3)
    detail = float(np.max(np.abs(packed[..., 3:])))
    out.append(Check("constant image has zero detail", detail, 0.0, detail == 0.0))
    x = rng.standard_normal((16, 16, 2))
    g = rng.standard_normal(W.pack(x, 2).shape)
    adj = abs(np.sum(W.pack(x, 2) * g) - np.sum(x * W.pack_adjoint(g, 2, 2)))
    out.append(_le("pack adjoint identity", adj, 1e-9))
    s2d = np.max(np.abs(W.depth_to_space(W.space_to_depth(x, 4), 4) - x))
    out.append(Check("space-to-depth bijective", float(s2d), 0.0, s2d == 0.0))
    return out


# ---------------------------------------------------------------------------
# gradients


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, shape)


def _gradient_cases(rng) -> dict[str, tuple[Callable, dict]]:
    x4 = _u(rng, 2, 6, 6, 3)
    return {
        "add": (lambda p: ops.add(p["a"], p["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 4)}),
        "mul": (lambda p: ops.mul(p["a"], p["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 1)}),
        "sub": (lambda p: ops.sub(p["a"], p["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 4)}),
        "sigmoid": (lambda p: ops.sigmoid(p["x"]), {"x": 3 * _u(rng, 5, 4)}),
        "swish": (lambda p: ops.swish(p["x"]), {"x": 3 * _u(rng, 5, 4)}),
        "exp": (lambda p: ops.exp(p["x"]), {"x": _u(rng, 5)}),
        "log": (lambda p: ops.log(p["x"]), {"x": rng.uniform(0.5, 2, 5)}),
        "square": (lambda p: ops.square(p["x"]), {"x": _u(rng, 5)}),
        "sum": (lambda p: ops.sum(p["x"], axis=1, keepdims=True), {"x": _u(rng, 3, 4)}),
        "mean": (lambda p: ops.mean(p["x"], axis=0), {"x": _u(rng, 3, 4)}),
        "reshape": (lambda p: ops.reshape(p["x"], (4, 3)), {"x": _u(rng, 3, 4)}),
        "transpose": (lambda p: ops.transpose(p["x"], (2, 0, 1)), {"x": _u(rng, 2, 3, 4)}),
        "getitem": (lambda p: ops.getitem(p["x"], (np.array([0, 2, 0]), slice(1, 3))), {"x": _u(rng, 3, 4)}),
        "concat": (lambda p: ops.concat([p["a"], p["b"]], axis=-1), {"a": _u(rng, 2, 3), "b": _u(rng, 2, 2)}),
        "take": (lambda p: ops.take(p["t"], np.array([1, 0, 1])), {"t": _u(rng, 3, 4)}),
        "scale_shift": (lambda p: ops.scale_shift(p["x"], p["s"], p["b"]),
                        {"x": _u(rng, 2, 3, 3, 4), "s": _u(rng, 2, 1, 1, 4), "b": _u(rng, 2, 1, 1, 4)}),
        "dense": (lambda p: ops.dense(p["x"], p["w"], p["b"]), {"x": _u(rng, 2, 3, 5), "w": _u(rng, 5, 4), "b": _u(rng, 4)}),
        "dense_general": (lambda p: ops.dense_general(p["x"], p["w"], p["b"], in_axes=2),
                          {"x": _u(rng, 2, 3, 2, 4), "w": _u(rng, 2, 4, 5), "b": _u(rng, 5)}),
        "einsum": (lambda p: ops.einsum("bqhd,bkhd->bhqk", p["a"], p["b"]),
                   {"a": _u(rng, 2, 3, 2, 4), "b": _u(rng, 2, 5, 2, 4)}),
        "softmax": (lambda p: ops.softmax(p["x"], axis=-1), {"x": 2 * _u(rng, 3, 5)}),
        "normalize": (lambda p: ops.normalize(p["x"], p["s"], p["b"]), {"x": _u(rng, 2, 3, 3, 4), "s": _u(rng, 4), "b": _u(rng, 4)}),
        "conv2d": (lambda p: ops.conv2d(p["x"], p["k"], p["b"]), {"x": x4, "k": _u(rng, 3, 3, 3, 4), "b": _u(rng, 4)}),
        "conv2d_stride2": (lambda p: ops.conv2d(p["x"], p["k"], None, stride=2), {"x": x4, "k": _u(rng, 3, 3, 3, 2)}),
        "conv2d_valid": (lambda p: ops.conv2d(p["x"], p["k"], None, padding="valid"), {"x": x4, "k": _u(rng, 2, 2, 3, 2)}),
        "conv2d_transpose": (lambda p: ops.conv2d_transpose(p["y"], p["k"], p["b"], stride=2),
                             {"y": _u(rng, 2, 3, 3, 4), "k": _u(rng, 3, 3, 3, 4), "b": _u(rng, 3)}),
        "avg_pool2d": (lambda p: ops.avg_pool2d(p["x"], 2), {"x": x4}),
        "space_to_depth": (lambda p: ops.space_to_depth(p["x"], 3), {"x": x4}),
        "depth_to_space": (lambda p: ops.depth_to_space(p["x"], 2), {"x": _u(rng, 1, 2, 2, 8)}),
        "dwt_pack": (lambda p: ops.linear_map(p["x"], lambda a: W.pack(a, 1),
                                              lambda g: W.pack_adjoint(g, 1, 3)), {"x": x4}),
        "mse": (lambda p: ops.mse(p["a"], p["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 4)}),
    }


GRAD_OPS = tuple(_gradient_cases(np.random.default_rng(0)))


def tiny_uvit() -> tuple[UViT, UViTConfig]:
    cfg = UViTConfig(image_size=8, in_channels=1, base_channels=8, emb_channels=16, channel_multiplier=(1, 2),
                     num_res_blocks=(1,), num_transformer_blocks=1, num_heads=2, expansion_factor=2,
                     transformer_dropout=0.0, patching=Patching.parse("dwt:1"), num_classes=2)
    return UViT(cfg, (-15.0, 15.0)), cfg


def uvit_gradient_check(seed: int = 0, tol: float = 1e-3) -> list[Check]:
    """End-to-end check with all parameters randomized, so zero-initialized outputs do not hide errors."""
    rng = np.random.default_rng(seed)
    model, cfg = tiny_uvit()
    params = {k: v.astype(np.float64) + 0.2 * rng.standard_normal(v.shape) for k, v in model.init(rng).items()}
    x = rng.standard_normal((2, 8, 8, 1))
    logsnr = np.array([-3.0, 2.0])
    ids = np.array([0, 2])
    inputs = dict(params, __x=x)

    def fn(p):
        return model.apply({k: v for k, v in p.items() if k != "__x"}, p["__x"], logsnr, ids)

    # a bias shared by all keys shifts every logit of a query equally; softmax
    # cancels it, so its gradient is identically zero and a relative error is meaningless
    names = sorted(k for k in params if not k.endswith("norm_k/bias"))
    wrt = ["__x"] + [names[i] for i in rng.choice(len(names), size=min(12, len(names)), replace=False)]
    res = check_gradients(fn, inputs, wrt=wrt, probes=6, h=1e-5, tol=tol, seed=seed)
    worst = max(res, key=lambda r: r.rel_err)
    return [_le("U-ViT end-to-end gradient", worst.rel_err, tol, f"worst input {worst.name}, {len(res)} tensors")]


def grad_check(op: str | None = None, seed: int = 0, tol: float = 1e-4) -> list[Check]:
    rng = np.random.default_rng(seed)
    cases = _gradient_cases(rng)
    if op is not None and op != "uvit" and op not in cases:
        raise KeyError(f"unknown op {op!r}; choose from {', '.join(GRAD_OPS + ('uvit',))}")
    out = []
    for name, (fn, inputs) in cases.items():
        if op is not None and name != op:
            continue
        res = check_gradients(fn, inputs, probes=12, h=1e-5, tol=tol, seed=seed)
        worst = max(r.rel_err for r in res)
        out.append(_le(f"grad {name}", worst, tol))
    if op is None or op == "uvit":
        out.extend(uvit_gradient_check(seed))
    return out


def suite_gradients(seed: int = 0, **_) -> list[Check]:
    return grad_check(None, seed)


# ---------------------------------------------------------------------------
# sampler


def exact_point_v(x0: np.ndarray) -> Callable:
    """The exact v-prediction when the data distribution is a point mass at ``x0``."""
    def v_fn(z, logsnr, class_ids):
        ab = S.alpha_sigma(logsnr)
        return (ab.alpha * z - x0) / ab.sigma
    return v_fn


def suite_sampler(seed: int = 0, **_) -> list[Check]:
    rng = np.random.default_rng(seed)
    spec = S.ScheduleSpec(S.ScheduleKind.COSINE)
    x0 = rng.uniform(-0.9, 0.9, (1, 8, 8, 1))
    out = []
    for noise_param in (0.0, 0.2):
        got = sample(exact_point_v(x0), spec, SamplerConfig(num_steps=128, noise_param=noise_param),
                     (4, 8, 8, 1), rng=np.random.default_rng(seed))
        out.append(_le(f"point-mass recovery (noise_param {noise_param})", np.max(np.abs(got - x0)), 0.02))
    n = 128
    worst = 0.0
    for i in range(2, n + 1):
        lt, ls = float(spec.logsnr(i / n)), float(spec.logsnr((i - 1) / n))
        c = ddpm_step_coeffs(lt, ls, 0.0)
        p = S.posterior_from_logsnr(ls, lt)
        worst = max(worst, abs(c.coef_z - p.coef_z), abs(c.coef_x - p.coef_x), abs(c.var - p.var))
    out.append(_le("noise_param 0 step law = posterior", worst, 1e-10, "128 steps"))
    a, b = rng.standard_normal((2, 3, 4, 4, 1))
    ident = np.max(np.abs(cfg_combine(a, b, 0.0) - a))
    out.append(Check("guidance eta=0 identity", float(ident), 0.0, ident == 0.0))
    lam, eta = 1.3, 2.5
    ab = S.alpha_sigma(lam)
    z = rng.standard_normal((4, 4, 1))
    v_c, v_u = rng.standard_normal((2, 4, 4, 1))
    eps_c, eps_u = ab.sigma * z + ab.alpha * v_c, ab.sigma * z + ab.alpha * v_u
    via_v = ab.sigma * z + ab.alpha * cfg_combine(v_c, v_u, eta)
    out.append(_le("guidance v-space = eps-space", np.max(np.abs(via_v - cfg_combine(eps_c, eps_u, eta))), 1e-6))
    return out


# ---------------------------------------------------------------------------
# pooling law


def pooling_ratios(seed: int = 0, n_pixels: int = 1 << 20, factors=(2, 4, 8)) -> dict[int, float]:
    side = int(round(math.sqrt(n_pixels)))
    noise = np.random.default_rng(seed).standard_normal((side, side))
    base = noise.std()
    ratios = {}
    for s in factors:
        pooled = noise.reshape(side // s, s, side // s, s).mean(axis=(1, 3))
        ratios[s] = float(base / pooled.std())
    return ratios


def noised_pyramid(out_dir: str, seed: int = 0, size: int = 128, logsnr: float = 0.0, factors=(1, 2, 4, 8)) -> list[str]:
    """Write the same noised image average-pooled at several factors (upsampled back for viewing)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    img = np.where(((yy // 16) + (xx // 16)) % 2 == 0, 0.6, -0.6)
    img += 0.3 * np.cos(2 * np.pi * xx / size)
    ab = S.alpha_sigma(logsnr)
    z = ab.alpha * img + ab.sigma * rng.standard_normal(img.shape)
    paths = []
    os.makedirs(out_dir, exist_ok=True)
    for s in factors:
        pooled = z.reshape(size // s, s, size // s, s).mean(axis=(1, 3))
        view = np.kron(pooled, np.ones((s, s))) / ab.alpha
        path = os.path.join(out_dir, f"pyramid_s{s}.pgm")
        write_pnm(path, to_uint8(view)[..., None])
        paths.append(path)
    return paths


def suite_pooling_law(seed: int = 0, out_dir: str | None = None, **_) -> list[Check]:
    ratios = pooling_ratios(seed)
    out = [_le(f"std ratio under {s}x{s} pooling = {s}", abs(r / s - 1.0), 0.02, f"ratio={r:.4f}")
           for s, r in ratios.items()]
    snr = 0.7
    out.append(_le("SNR scales by s^2", abs(S.snr_at_pooled_resolution(snr, 4) - snr * 16), 1e-12))
    if out_dir is not None:
        noised_pyramid(out_dir, seed)
        from .report import plot_pooling_law
        plot_pooling_law(os.path.join(out_dir, "pooling_law.png"), list(ratios), list(ratios.values()))
    return out


_SUITES = {
    "schedules": suite_schedules,
    "wavelet": suite_wavelet,
    "gradients": suite_gradients,
    "sampler": suite_sampler,
    "pooling-law": suite_pooling_law,
}


def run(suite: str = "all", seed: int = 0, out_dir: str | None = None, echo=print) -> bool:
    names = SUITES if suite == "all" else (suite,)
    ok = True
    for name in names:
        if name not in _SUITES:
            raise KeyError(f"unknown suite {name!r}")
        t0 = time.perf_counter()
        checks = _SUITES[name](seed=seed, out_dir=out_dir)
        echo(f"== {name} ({time.perf_counter() - t0:.2f}s)")
        for c in checks:
            echo(c.line())
            ok &= c.passed
    return ok
