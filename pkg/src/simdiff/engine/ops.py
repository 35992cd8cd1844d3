"""Differentiable primitives over channels-last tensors.

Broadcasting follows numpy. Convolutions use ``[B, H, W, C]`` inputs and
``[kh, kw, Cin, Cout]`` kernels.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, as_tensor, make, unbroadcast

NORM_EPS = 1e-5


def _span(pair):
    return pair[0] + pair[1]


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                           unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1.0 - s),))


def swish(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return make(e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return make(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def scale_shift(x, scale, shift) -> Tensor:
    """FiLM modulation ``x * (1 + scale) + shift``."""
    return add(mul(x, add(scale, 1.0)), shift)


# ---------------------------------------------------------------------------
# reductions and shape manipulation

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return make(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        out = np.zeros_like(x.data)
        if _has_fancy(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)
    return make(x.data[index], (x,), backward)


def _has_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return make(np.concatenate([x.data for x in xs], axis=axis), xs,
                lambda g: tuple(np.split(g, sizes, axis=axis)))


def take(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` (embedding tables)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)
    return make(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# linear layers and contractions

def dense(x, w, b=None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input features {x.shape[-1]} != kernel rows {w.shape[0]}")
    out = x.data @ w.data

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw
    y = make(out, (x, w), backward)
    return y if b is None else add(y, b)


def dense_general(x, w, b=None, in_axes: int = 1) -> Tensor:
    """Affine map contracting the trailing ``in_axes`` axes of x with the leading axes of w.

    w has shape ``in_shape + out_shape``; the result has shape ``x.shape[:-in_axes] + out_shape``.
    """
    x, w = as_tensor(x), as_tensor(w)
    in_shape = w.shape[:in_axes]
    out_shape = w.shape[in_axes:]
    if tuple(x.shape[x.ndim - in_axes:]) != tuple(in_shape):
        raise ValueError(f"dense_general: {x.shape} does not end with {in_shape}")
    lead = x.shape[: x.ndim - in_axes]
    x2 = reshape(x, lead + (int(np.prod(in_shape)),))
    w2 = reshape(w, (int(np.prod(in_shape)), int(np.prod(out_shape))))
    y = reshape(dense(x2, w2), lead + tuple(out_shape))
    return y if b is None else add(y, b)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum where every input index appears in the other operand or the output."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = spec.replace(" ", "").split("->")
    ia, ib = ins.split(",")
    for idx, other in ((ia, ib + out), (ib, ia + out)):
        if any(ch not in other for ch in idx):
            raise ValueError(f"einsum '{spec}': unsupported (index summed within one operand)")
    return make(np.einsum(spec, a.data, b.data, optimize=True), (a, b),
                lambda g: (np.einsum(f"{out},{ib}->{ia}", g, b.data, optimize=True) if a.requires_grad else None,
                           np.einsum(f"{ia},{out}->{ib}", a.data, g, optimize=True) if b.requires_grad else None))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def standardize(x, eps: float = NORM_EPS) -> Tensor:
    """Zero mean, unit variance over the last axis."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)
    return make(y, (x,), backward)


def normalize(x, scale, bias=None, eps: float = NORM_EPS) -> Tensor:
    """Layer normalization over the channel (last) axis with learned scale and optional bias."""
    y = mul(standardize(x, eps), scale)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------------------
# convolution

def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _conv_geometry(h, w, kh, kw, stride, padding):
    if padding == "same":
        ph, pw = _same_pads(h, kh, stride), _same_pads(w, kw, stride)
    elif padding == "valid":
        ph, pw = (0, 0), (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    ho = (h + _span(ph) - kh) // stride + 1
    wo = (w + _span(pw) - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    return ph, pw, ho, wo


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), ph, pw, (0, 0))) if (_span(ph) or _span(pw)) else x


def _window(xp, i, j, stride, ho, wo):
    """The [B,Ho,Wo,C] input slice that meets kernel offset (i, j)."""
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


# below this many channels one matmul over stacked windows beats per-offset matmuls
_NARROW = 16


def _stacked(xp, kh, kw, stride, ho, wo):
    """All kernel windows as one [B*Ho*Wo, kh*kw*C] matrix (im2col)."""
    cols = np.stack([_window(xp, i, j, stride, ho, wo) for i in range(kh) for j in range(kw)], axis=3)
    return cols.reshape(-1, kh * kw * xp.shape[3])


def _conv_fwd(x, k, stride, ph, pw, ho, wo):
    """Returns the output and the padded input kept for backward."""
    kh, kw, cin, cout = k.shape
    xp = _pad(x, ph, pw)
    if cin < _NARROW:
        out = _stacked(xp, kh, kw, stride, ho, wo) @ k.reshape(-1, cout)
    else:
        out = np.zeros((x.shape[0] * ho * wo, cout), dtype=np.result_type(x, k))
        for i in range(kh):
            for j in range(kw):
                out += _window(xp, i, j, stride, ho, wo).reshape(-1, cin) @ k[i, j]
    return out.reshape(x.shape[0], ho, wo, cout), xp


def _conv_dx(g, k, x_shape, stride, ph, pw):
    kh, kw, cin, cout = k.shape
    b, h, w, _ = x_shape
    ho, wo = g.shape[1:3]
    hp, wp = h + _span(ph), w + _span(pw)
    if (kh == kw == stride and hp == ho * kh and wp == wo * kw) or cout < _NARROW:
        cols = (g.reshape(-1, cout) @ k.reshape(-1, cout).T).reshape(b, ho, wo, kh, kw, cin)
        if kh == kw == stride and hp == ho * kh and wp == wo * kw:
            dxp = cols.transpose(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, cin)
        else:
            dxp = np.zeros((b, hp, wp, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    _window(dxp, i, j, stride, ho, wo)[...] += cols[:, :, :, i, j]
    else:
        # one contiguous [B,Ho,Wo,Cin] block per kernel offset
        parts = np.matmul(g.reshape(1, -1, cout), k.reshape(kh * kw, cin, cout).transpose(0, 2, 1))
        parts = parts.reshape(kh, kw, b, ho, wo, cin)
        dxp = np.zeros((b, hp, wp, cin), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                _window(dxp, i, j, stride, ho, wo)[...] += parts[i, j]
    return dxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + w]


def _conv_dk(xp, g, k_shape, stride):
    kh, kw, cin, cout = k_shape
    ho, wo = g.shape[1:3]
    g2 = g.reshape(-1, cout)
    if cin < _NARROW:
        return (_stacked(xp, kh, kw, stride, ho, wo).T @ g2).reshape(k_shape)
    dk = np.empty(k_shape, dtype=np.result_type(xp, g))
    for i in range(kh):
        for j in range(kw):
            dk[i, j] = _window(xp, i, j, stride, ho, wo).reshape(-1, cin).T @ g2
    return dk


def conv2d(x, k, b=None, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``[B,H,W,Cin]`` with ``[kh,kw,Cin,Cout]``."""
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4 or k.ndim != 4 or x.shape[3] != k.shape[2]:
        raise ValueError(f"conv2d: incompatible shapes {x.shape} and {k.shape}")
    ph, pw, ho, wo = _conv_geometry(x.shape[1], x.shape[2], k.shape[0], k.shape[1], stride, padding)
    out, xp = _conv_fwd(x.data, k.data, stride, ph, pw, ho, wo)
    y = make(out, (x, k), lambda g: (
        _conv_dx(g, k.data, x.shape, stride, ph, pw) if x.requires_grad else None,
        _conv_dk(xp, g, k.shape, stride) if k.requires_grad else None))
    return y if b is None else add(y, b)


def conv_transpose_output_size(size: int, k: int, stride: int, padding: str) -> int:
    return size * stride if padding == "same" else (size - 1) * stride + k


def conv2d_transpose(y, k, b=None, stride: int = 1, padding: str = "same") -> Tensor:
    """Adjoint of :func:`conv2d` w.r.t. its input: ``[B,Ho,Wo,Cout] -> [B,H,W,Cin]``.

    The kernel keeps conv2d's ``[kh,kw,Cin,Cout]`` layout, so upsampling to Cin
    channels uses a kernel whose last axis matches ``y``'s channels.
    """
    y, k = as_tensor(y), as_tensor(k)
    if y.ndim != 4 or k.ndim != 4 or y.shape[3] != k.shape[3]:
        raise ValueError(f"conv2d_transpose: incompatible shapes {y.shape} and {k.shape}")
    kh, kw, cin, _ = k.shape
    h = conv_transpose_output_size(y.shape[1], kh, stride, padding)
    w = conv_transpose_output_size(y.shape[2], kw, stride, padding)
    ph, pw, ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)
    if (ho, wo) != y.shape[1:3]:
        raise ValueError("conv2d_transpose: geometry mismatch")
    x_shape = (y.shape[0], h, w, cin)
    out = _conv_dx(y.data, k.data, x_shape, stride, ph, pw)
    def backward(g):
        gy, gp = _conv_fwd(g, k.data, stride, ph, pw, ho, wo)
        return gy if y.requires_grad else None, _conv_dk(gp, y.data, k.shape, stride) if k.requires_grad else None
    r = make(out, (y, k), backward)
    return r if b is None else add(r, b)


# ---------------------------------------------------------------------------
# pooling, rearrangement, regularization

def avg_pool2d(x, s: int) -> Tensor:
    """Mean over non-overlapping s x s windows of ``[..., H, W, C]``."""
    x = as_tensor(x)
    if s == 1:
        return x
    *lead, h, w, c = x.shape
    if h % s or w % s:
        raise ValueError(f"avg_pool2d: {h}x{w} not divisible by {s}")
    out = x.data.reshape(*lead, h // s, s, w // s, s, c).mean(axis=(-4, -2))

    def backward(g):
        g = np.repeat(np.repeat(g, s, axis=-3), s, axis=-2)
        return (g / (s * s),)
    return make(out, (x,), backward)


def resize_down_area(x, factor: int) -> Tensor:
    """Area downsampling by an integer factor (identical to average pooling)."""
    return avg_pool2d(x, factor)


def space_to_depth(x, p: int) -> Tensor:
    if p == 1:
        return as_tensor(x)
    x = as_tensor(x)
    b, h, w, c = x.shape
    if h % p or w % p:
        raise ValueError(f"space_to_depth: {h}x{w} not divisible by {p}")
    t = reshape(x, (b, h // p, p, w // p, p, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, h // p, w // p, p * p * c))


def depth_to_space(x, p: int) -> Tensor:
    if p == 1:
        return as_tensor(x)
    x = as_tensor(x)
    b, h, w, cp = x.shape
    c = cp // (p * p)
    t = reshape(x, (b, h, w, p, p, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, h * p, w * p, c))


def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) * (1.0 / (1.0 - rate))
    return make(x.data * mask, (x,), lambda g: (g * mask,))


def linear_map(x, forward: Callable[[np.ndarray], np.ndarray],
               adjoint: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply a fixed linear operator given as a forward function and its adjoint."""
    x = as_tensor(x)
    return make(forward(x.data), (x,), lambda g: (adjoint(g),))


def mse(a, b) -> Tensor:
    return mean(square(sub(a, b)))
