"""U-ViT: a small convolutional U-Net whose coarsest level is a transformer stack."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import wavelet
from .engine import Tensor, ops
from .engine.tensor import as_tensor

FOURIER_FEATURES = 64
RANGE_SLACK = 1e-6


@dataclass(frozen=True)
class Patching:
    """Resolution-reducing front end. ``size`` is the DWT level count or the patch side."""

    kind: str = "none"  # none | dwt | space_to_depth | conv
    size: int = 1

    KINDS = ("none", "dwt", "space_to_depth", "conv")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown patching {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "none":
            object.__setattr__(self, "size", 1)
        elif self.size < 1:
            raise ValueError("patching size must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "Patching":
        text = text.strip().lower()
        if text in ("none", ""):
            return cls()
        kind, _, size = text.partition(":")
        kind = {"s2d": "space_to_depth", "dwt_5/3": "dwt"}.get(kind, kind)
        return cls(kind, int(size or 1))

    def __str__(self):
        return "none" if self.kind == "none" else f"{self.kind}:{self.size}"

    @property
    def factor(self) -> int:
        """Spatial downsampling factor."""
        return 2 ** self.size if self.kind == "dwt" else self.size

    def channels(self, c: int) -> int:
        return c * self.factor ** 2


@dataclass(frozen=True)
class UViTConfig:
    image_size: int = 16
    in_channels: int = 3
    base_channels: int = 32
    emb_channels: int = 128
    channel_multiplier: tuple[int, ...] = (1, 2, 4)
    num_res_blocks: tuple[int, ...] = (1, 1)
    num_transformer_blocks: int = 2
    num_heads: int = 4
    expansion_factor: int = 4
    transformer_dropout: float = 0.2
    dropout: float = 0.0
    dropout_from_resolution: int = 16
    patching: Patching = field(default_factory=Patching)
    num_classes: int = 0
    logsnr_input: str = "linear"
    mlp_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_multiplier", tuple(int(c) for c in self.channel_multiplier))
        object.__setattr__(self, "num_res_blocks", tuple(int(n) for n in self.num_res_blocks))
        if isinstance(self.patching, str):
            object.__setattr__(self, "patching", Patching.parse(self.patching))
        if len(self.channel_multiplier) != len(self.num_res_blocks) + 1:
            raise ValueError("channel_multiplier needs exactly one more entry than num_res_blocks")
        if self.logsnr_input != "linear":
            raise ValueError("only logsnr_input='linear' is supported")
        if self.transformer_width % self.num_heads:
            raise ValueError(f"transformer width {self.transformer_width} not divisible by {self.num_heads} heads")
        side = self.image_size
        if side % self.patching.factor:
            raise ValueError(f"image_size {side} not divisible by patch factor {self.patching.factor}")
        if self.patching.kind == "dwt" and side % (2 ** self.patching.size):
            raise ValueError("image_size not divisible by 2^levels")
        if self.base_resolution % (2 ** len(self.num_res_blocks)):
            raise ValueError("resolution after patching cannot be halved once per level")
        for p in (self.transformer_dropout, self.dropout):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def base_resolution(self) -> int:
        return self.image_size // self.patching.factor

    @property
    def grid_size(self) -> int:
        return self.base_resolution // 2 ** len(self.num_res_blocks)

    @property
    def transformer_width(self) -> int:
        return self.base_channels * self.channel_multiplier[-1]

    def level_channels(self, i: int) -> int:
        return self.base_channels * self.channel_multiplier[i]


# ---------------------------------------------------------------------------
# parameters


def fan_in_uniform(fan_in: int) -> Callable:
    limit = math.sqrt(6.0 / fan_in)
    return lambda rng, shape: rng.uniform(-limit, limit, size=shape)


def zeros(rng, shape):
    return np.zeros(shape)


def ones(rng, shape):
    return np.ones(shape)


def normal(std: float) -> Callable:
    return lambda rng, shape: rng.normal(0.0, std, size=shape)


class Scope:
    """Named-parameter access. In init mode, parameters are created on first use."""

    def __init__(self, params: dict, rng: np.random.Generator | None = None, prefix: str = ""):
        self.params = params
        self.rng = rng
        self.prefix = prefix

    def child(self, name: str) -> "Scope":
        return Scope(self.params, self.rng, f"{self.prefix}{name}/")

    def param(self, name: str, shape: tuple[int, ...], init: Callable) -> Tensor:
        key = self.prefix + name
        if key not in self.params:
            if self.rng is None:
                raise KeyError(f"missing parameter {key}")
            self.params[key] = Tensor(np.asarray(init(self.rng, tuple(shape)), dtype=np.float32))
        p = self.params[key]
        if tuple(p.shape) != tuple(shape):
            raise ValueError(f"parameter {key} has shape {p.shape}, expected {tuple(shape)}")
        return p


@dataclass
class DropoutSite:
    name: str
    resolution: int
    rate: float
    active: bool


@dataclass
class _Ctx:
    config: UViTConfig
    train: bool
    rng: np.random.Generator | None
    sites: list[DropoutSite]

    def dropout(self, scope: Scope, name: str, x, rate: float, resolution: int):
        active = rate > 0.0 and resolution <= self.config.dropout_from_resolution
        self.sites.append(DropoutSite(scope.prefix + name, resolution, rate, active))
        if not active:
            return x
        return ops.dropout(x, rate, self.rng, self.train)


# ---------------------------------------------------------------------------
# layers


def dense(scope: Scope, x, features: int, zero_init: bool = False):
    fan_in = x.shape[-1]
    w = scope.param("kernel", (fan_in, features), zeros if zero_init else fan_in_uniform(fan_in))
    b = scope.param("bias", (features,), zeros)
    return ops.dense(x, w, b)


def conv(scope: Scope, x, features: int, k: int = 3, stride: int = 1, padding: str = "same",
         zero_init: bool = False):
    cin = x.shape[-1]
    fan_in = k * k * cin
    w = scope.param("kernel", (k, k, cin, features), zeros if zero_init else fan_in_uniform(fan_in))
    b = scope.param("bias", (features,), zeros)
    return ops.conv2d(x, w, b, stride=stride, padding=padding)


def conv_transpose(scope: Scope, x, features: int, k: int, stride: int):
    cin = x.shape[-1]
    w = scope.param("kernel", (k, k, features, cin), fan_in_uniform(cin * (k // stride) ** 2))
    b = scope.param("bias", (features,), zeros)
    return ops.conv2d_transpose(x, w, b, stride=stride, padding="valid")


def normalize(scope: Scope, x, with_bias: bool):
    c = x.shape[-1]
    scale = scope.param("scale", (c,), ones)
    bias = scope.param("bias", (c,), zeros) if with_bias else None
    return ops.normalize(x, scale, bias)


def fourier_features(u: np.ndarray) -> np.ndarray:
    """Sinusoidal features of u in [0, 1]: 32 geometric frequencies, sin/cos interleaved."""
    half = FOURIER_FEATURES // 2
    freqs = 1000.0 * np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(u, dtype=np.float64)[:, None] * freqs[None, :]
    out = np.empty((ang.shape[0], FOURIER_FEATURES))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def normalized_logsnr(logsnr, logsnr_range: tuple[float, float]) -> np.ndarray:
    lo, hi = logsnr_range
    u = (np.asarray(logsnr, dtype=np.float64) - lo) / (hi - lo)
    slack = RANGE_SLACK / (hi - lo)
    if np.any(u < -slack) or np.any(u > 1.0 + slack) or np.any(~np.isfinite(u)):
        raise ValueError(f"logsnr outside the schedule's attained range [{lo}, {hi}]")
    return np.clip(u, 0.0, 1.0)


def logsnr_embedding(scope: Scope, logsnr, logsnr_range, emb_channels: int):
    feats = Tensor(fourier_features(normalized_logsnr(logsnr, logsnr_range)))
    h = ops.swish(dense(scope.child("dense0"), feats, emb_channels))
    return dense(scope.child("dense1"), h, emb_channels)


def resnet_block(scope: Scope, ctx: _Ctx, x, emb, skip=None):
    _, res, _, c = x.shape
    h = normalize(scope.child("norm_in"), x, with_bias=True)
    if skip is not None:
        if tuple(skip.shape) != tuple(x.shape):
            raise ValueError(f"skip shape {skip.shape} != input shape {x.shape}")
        s = normalize(scope.child("norm_skip"), skip, with_bias=True)
        h = ops.mul(ops.add(h, s), 1.0 / math.sqrt(2.0))
    h = ops.swish(h)
    h = conv(scope.child("conv0"), h, c)
    emb_out = dense(scope.child("film"), emb, 2 * c)
    emb_out = ops.reshape(emb_out, (emb_out.shape[0], 1, 1, 2 * c))
    scale, shift = emb_out[..., :c], emb_out[..., c:]
    h = ops.scale_shift(normalize(scope.child("norm_mid"), h, with_bias=True), scale, shift)
    h = ops.swish(h)
    h = ctx.dropout(scope, "dropout", h, ctx.config.dropout, res)
    h = conv(scope.child("conv1"), h, c, zero_init=True)
    return ops.add(x, h)


def mlp_block(scope: Scope, ctx: _Ctx, x, emb, resolution: int):
    b, _, c = x.shape
    width = ctx.config.expansion_factor * c
    h = normalize(scope.child("norm"), x, with_bias=False)
    h = dense(scope.child("dense_in"), h, width)
    scale = ops.reshape(dense(scope.child("scale"), emb, width), (b, 1, width))
    shift = ops.reshape(dense(scope.child("shift"), emb, width), (b, 1, width))
    h = ops.swish(h)
    h = ops.scale_shift(h, scale, shift)
    h = ctx.dropout(scope, "dropout", h, ctx.config.transformer_dropout, resolution)
    return dense(scope.child("dense_out"), h, c, zero_init=True)


def self_attention(scope: Scope, ctx: _Ctx, x):
    _, _, c = x.shape
    heads = ctx.config.num_heads
    if c % heads:
        raise ValueError(f"{c} channels not divisible by {heads} heads")
    d = c // heads
    xn = normalize(scope.child("norm"), x, with_bias=False)

    def project(name):
        s = scope.child(name)
        w = s.param("kernel", (c, heads, d), fan_in_uniform(c))
        bias = s.param("bias", (heads, d), zeros)
        return ops.dense_general(xn, w, bias, in_axes=1)

    q, k, v = project("query"), project("key"), project("value")
    q = normalize(scope.child("norm_q"), q, with_bias=True)
    k = normalize(scope.child("norm_k"), k, with_bias=True)
    q = ops.mul(q, d ** -0.5)
    weights = ops.softmax(ops.einsum("bqhd,bkhd->bhqk", q, k), axis=-1)
    vals = ops.einsum("bhqk,bkhd->bqhd", weights, v)
    s = scope.child("out")
    w = s.param("kernel", (heads, d, c), zeros)
    bias = s.param("bias", (c,), zeros)
    return ops.dense_general(vals, w, bias, in_axes=2)


def transformer_block(scope: Scope, ctx: _Ctx, x, emb, resolution: int):
    if ctx.config.mlp_first:
        x = ops.add(x, mlp_block(scope.child("mlp"), ctx, x, emb, resolution))
        x = ops.add(x, self_attention(scope.child("attn"), ctx, x))
    else:
        x = ops.add(x, self_attention(scope.child("attn"), ctx, x))
        x = ops.add(x, mlp_block(scope.child("mlp"), ctx, x, emb, resolution))
    return x


# ---------------------------------------------------------------------------
# network


class UViT:
    """The network plus its conditioning. Parameters live outside, as a name -> array dict.

    ``logsnr_range`` is the (lowest, highest) logSNR the schedule attains; the
    embedding maps it linearly onto [0, 1].
    """

    def __init__(self, config: UViTConfig, logsnr_range: tuple[float, float]):
        lo, hi = logsnr_range
        if not lo < hi:
            raise ValueError("logsnr_range must be increasing")
        self.config = config
        self.logsnr_range = (float(lo), float(hi))
        self.sites: list[DropoutSite] = []
        self.skips_produced = 0
        self.skips_consumed = 0

    @property
    def null_class(self) -> int:
        return self.config.num_classes

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg = self.config
        store: dict[str, Tensor] = {}
        x = np.zeros((1, cfg.image_size, cfg.image_size, cfg.in_channels), dtype=np.float32)
        self._forward(Scope(store, rng), x, np.array([self.logsnr_range[1]]), None, train=False, rng=None)
        return {k: v.data for k, v in store.items()}

    def apply(self, params, x, logsnr, class_ids=None, *, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        """Predict v for noisy images ``x`` of shape [B, H, W, C] at the given logSNR.

        ``class_ids`` may be None (all unconditional) or an int array where
        ``num_classes`` (or -1) selects the null embedding.
        """
        store = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
        return self._forward(Scope(store), x, logsnr, class_ids, train=train, rng=rng)

    def _class_ids(self, class_ids, batch: int) -> np.ndarray:
        if class_ids is None:
            return np.full(batch, self.null_class, dtype=np.int64)
        ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (batch,)).copy()
        ids[ids == -1] = self.null_class
        if np.any(ids < 0) or np.any(ids > self.null_class):
            raise ValueError(f"class id out of range [0, {self.config.num_classes})")
        return ids

    def _forward(self, scope: Scope, x, logsnr, class_ids, *, train: bool, rng) -> Tensor:
        cfg = self.config
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.in_channels):
            raise ValueError(f"expected input [B, {cfg.image_size}, {cfg.image_size}, {cfg.in_channels}], got {x.shape}")
        batch = x.shape[0]
        logsnr = np.broadcast_to(np.asarray(logsnr, dtype=np.float64), (batch,))
        ctx = _Ctx(cfg, train, rng, [])

        emb = logsnr_embedding(scope.child("logsnr_emb"), logsnr, self.logsnr_range, cfg.emb_channels)
        table = scope.param("class_emb", (cfg.num_classes + 1, cfg.emb_channels), normal(1.0))
        emb = ops.add(emb, ops.take(table, self._class_ids(class_ids, batch)))

        h = self._patch_in(scope.child("patch_in"), x)
        h = conv(scope.child("embed_input"), h, cfg.level_channels(0))

        hs = []
        for i, nblocks in enumerate(cfg.num_res_blocks):
            for j in range(nblocks):
                h = resnet_block(scope.child(f"down{i}/block{j}"), ctx, h, emb)
                hs.append(h)
            h = conv(scope.child(f"down{i}/downsample"), h, cfg.level_channels(i + 1), k=2, stride=2,
                     padding="valid")
        self.skips_produced = len(hs)

        _, gh, gw, c = h.shape
        tokens = ops.reshape(h, (batch, gh * gw, c))
        pos = scope.param("pos_emb", (gh * gw, c), normal(0.01))
        tokens = ops.add(tokens, pos)
        for k in range(cfg.num_transformer_blocks):
            tokens = transformer_block(scope.child(f"transformer{k}"), ctx, tokens, emb, gh)
        h = ops.reshape(tokens, (batch, gh, gw, c))

        consumed = 0
        for i in reversed(range(len(cfg.num_res_blocks))):
            h = conv_transpose(scope.child(f"up{i}/upsample"), h, cfg.level_channels(i), k=2, stride=2)
            for j in range(cfg.num_res_blocks[i]):
                h = resnet_block(scope.child(f"up{i}/block{j}"), ctx, h, emb, skip=hs.pop())
                consumed += 1
        if hs:
            raise RuntimeError(f"{len(hs)} skip connections left unconsumed")
        self.skips_consumed = consumed

        h = conv(scope.child("project_output"), h, cfg.patching.channels(cfg.in_channels), zero_init=True)
        out = self._patch_out(scope.child("patch_out"), h)
        self.sites = ctx.sites
        return out

    def _patch_in(self, scope: Scope, x):
        p = self.config.patching
        if p.kind == "none":
            return x
        if p.kind == "space_to_depth":
            return ops.space_to_depth(x, p.size)
        if p.kind == "dwt":
            c = x.shape[-1]
            return ops.linear_map(x, lambda a: wavelet.pack(a, p.size),
                                  lambda g: wavelet.pack_adjoint(g, p.size, c))
        return conv(scope, x, p.channels(x.shape[-1]), k=p.size, stride=p.size, padding="valid")

    def _patch_out(self, scope: Scope, h):
        p = self.config.patching
        c = self.config.in_channels
        if p.kind == "none":
            return h
        if p.kind == "space_to_depth":
            return ops.depth_to_space(h, p.size)
        if p.kind == "dwt":
            return ops.linear_map(h, lambda a: wavelet.unpack(a, p.size),
                                  lambda g: wavelet.unpack_adjoint(g, p.size))
        return conv_transpose(scope, h, c, k=p.size, stride=p.size)


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def uvit_forward(model: UViT, params, x, logsnr, class_ids=None, **kwargs) -> Tensor:
    return model.apply(params, x, logsnr, class_ids, **kwargs)
