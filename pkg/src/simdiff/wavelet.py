"""LeGall 5/3 lifting wavelet with multi-level channel packing, plus space-to-depth.

Arrays are channels-last: ``[..., H, W, C]``. Rows are transformed before
columns. Packed layout for ``L`` levels, all at ``H/2^L x W/2^L``::

    LL_L | LH_L HL_L HH_L | LH_{L-1} HL_{L-1} HH_{L-1} (space-to-depth by 2) | ...

where the first letter is the filter along the width and the second along the
height. Finer-level bands are rearranged with :func:`space_to_depth` so every
band shares the coarsest grid.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np


def _check_even(n: int):
    if n < 2 or n % 2:
        raise ValueError(f"5/3 lifting needs an even length >= 2, got {n}")


def _lift_forward(x: np.ndarray):
    """Forward lifting along the last axis."""
    _check_even(x.shape[-1])
    even = x[..., 0::2]
    odd = x[..., 1::2]
    # whole-sample symmetric extension: x[2m] mirrors to x[2m-2]
    even_next = np.concatenate([even[..., 1:], even[..., -1:]], axis=-1)
    detail = odd - 0.5 * (even + even_next)
    detail_prev = np.concatenate([detail[..., :1], detail[..., :-1]], axis=-1)
    approx = even + 0.25 * (detail_prev + detail)
    return approx, detail


def _lift_inverse(approx: np.ndarray, detail: np.ndarray):
    if approx.shape != detail.shape:
        raise ValueError(f"approx {approx.shape} and detail {detail.shape} must match")
    if approx.shape[-1] < 1:
        raise ValueError("empty input")
    detail_prev = np.concatenate([detail[..., :1], detail[..., :-1]], axis=-1)
    even = approx - 0.25 * (detail_prev + detail)
    even_next = np.concatenate([even[..., 1:], even[..., -1:]], axis=-1)
    odd = detail + 0.5 * (even + even_next)
    out = np.empty(approx.shape[:-1] + (2 * approx.shape[-1],), dtype=np.result_type(approx, detail))
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def dwt53_forward_1d(signal):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError("expected a 1-D signal")
    return _lift_forward(signal)


def dwt53_inverse_1d(approx, detail):
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    return _lift_inverse(approx, detail)


@functools.lru_cache(maxsize=64)
def _analysis_matrix(n: int) -> np.ndarray:
    """M with concat(approx, detail) = M @ x for length-n signals."""
    a, d = _lift_forward(np.eye(n))
    return np.concatenate([a, d], axis=-1).T


@functools.lru_cache(maxsize=64)
def _synthesis_matrix(n: int) -> np.ndarray:
    """S with x = S @ concat(approx, detail)."""
    eye = np.eye(n)
    return _lift_inverse(eye[:, : n // 2], eye[:, n // 2:]).T


# Each 1-D operator maps an axis of length n to (first half, second half) or back.
# Swapping in transposed matrices turns the 2-D pipelines into their adjoints.

def _split_lift(x):
    return _lift_forward(x)


def _join_lift(a, d):
    return _lift_inverse(a, d)


def _split_by(matrix_fn):
    def split(x):
        n = x.shape[-1]
        y = x @ matrix_fn(n).T.astype(x.dtype)
        return y[..., : n // 2], y[..., n // 2:]
    return split


def _join_by(matrix_fn):
    def join(a, d):
        n = 2 * a.shape[-1]
        return np.concatenate([a, d], axis=-1) @ matrix_fn(n).T.astype(a.dtype)
    return join


def _along(fn, x, axis):
    x = np.moveaxis(x, axis, -1)
    return tuple(np.moveaxis(r, -1, axis) for r in fn(x))


def _join_along(fn, a, d, axis):
    out = fn(np.moveaxis(a, axis, -1), np.moveaxis(d, axis, -1))
    return np.moveaxis(out, -1, axis)


def space_to_depth(image: np.ndarray, p: int) -> np.ndarray:
    """[..., H, W, C] -> [..., H/p, W/p, p*p*C]; channel index = (i*p + j)*C + c."""
    image = np.asarray(image)
    *lead, h, w, c = image.shape
    if h % p or w % p:
        raise ValueError(f"spatial size {h}x{w} not divisible by patch size {p}")
    x = image.reshape(*lead, h // p, p, w // p, p, c)
    n = len(lead)
    x = np.moveaxis(x, n + 2, n + 1)  # [..., H/p, W/p, p, p, C] with rows then cols
    return x.reshape(*lead, h // p, w // p, p * p * c)


def depth_to_space(packed: np.ndarray, p: int) -> np.ndarray:
    packed = np.asarray(packed)
    *lead, h, w, cp = packed.shape
    if cp % (p * p):
        raise ValueError(f"{cp} channels not divisible by {p}^2")
    c = cp // (p * p)
    n = len(lead)
    x = packed.reshape(*lead, h, w, p, p, c)
    x = np.moveaxis(x, n + 2, n + 1)
    return x.reshape(*lead, h * p, w * p, c)


def _analysis(x: np.ndarray, levels: int, split) -> np.ndarray:
    h, w = x.shape[-3], x.shape[-2]
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if h % (2 ** levels) or w % (2 ** levels):
        raise ValueError(f"{h}x{w} not divisible by 2^{levels}")
    ll = x
    details = []
    for _ in range(levels):
        low_w, high_w = _along(split, ll, -2)
        ll, lh = _along(split, low_w, -3)
        hl, hh = _along(split, high_w, -3)
        details.append(np.concatenate([lh, hl, hh], axis=-1))
    parts = [ll]
    for k in reversed(range(levels)):
        parts.append(space_to_depth(details[k], 2 ** (levels - 1 - k)))
    return np.concatenate(parts, axis=-1)


def _synthesis(packed: np.ndarray, levels: int, channels: int, join) -> np.ndarray:
    c = channels
    if packed.shape[-1] != c * 4 ** levels:
        raise ValueError(f"packed stack has {packed.shape[-1]} channels, expected {c * 4 ** levels}")
    ll = packed[..., :c]
    offset = c
    details = [None] * levels
    for k in reversed(range(levels)):
        p = 2 ** (levels - 1 - k)
        width = 3 * c * p * p
        details[k] = depth_to_space(packed[..., offset:offset + width], p)
        offset += width
    for k in reversed(range(levels)):
        lh, hl, hh = np.split(details[k], 3, axis=-1)
        low_w = _join_along(join, ll, lh, -3)
        high_w = _join_along(join, hl, hh, -3)
        ll = _join_along(join, low_w, high_w, -2)
    return ll


@dataclass
class DwtStack:
    levels: int
    base_h: int
    base_w: int
    packed: np.ndarray

    @property
    def channels(self) -> int:
        return self.packed.shape[-1] // 4 ** self.levels


def dwt53_forward_2d(image: np.ndarray, levels: int) -> DwtStack:
    image = np.asarray(image)
    if image.ndim < 3:
        raise ValueError("expected [..., H, W, C]")
    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float64)
    packed = _analysis(image, levels, _split_lift)
    return DwtStack(levels=levels, base_h=image.shape[-3], base_w=image.shape[-2], packed=packed)


def dwt53_inverse_2d(stack: DwtStack) -> np.ndarray:
    packed = np.asarray(stack.packed)
    expect = (stack.base_h >> stack.levels, stack.base_w >> stack.levels)
    if packed.shape[-3:-1] != expect:
        raise ValueError(f"packed spatial shape {packed.shape[-3:-1]} does not match {expect}")
    if packed.shape[-1] % 4 ** stack.levels:
        raise ValueError("channel count is not a multiple of 4^levels")
    return _synthesis(packed, stack.levels, stack.channels, _join_lift)


def pack(image: np.ndarray, levels: int) -> np.ndarray:
    return dwt53_forward_2d(image, levels).packed


def unpack(packed: np.ndarray, levels: int) -> np.ndarray:
    packed = np.asarray(packed)
    h, w = packed.shape[-3:-1]
    return dwt53_inverse_2d(DwtStack(levels, h << levels, w << levels, packed))


def pack_adjoint(g: np.ndarray, levels: int, channels: int) -> np.ndarray:
    """Adjoint of :func:`pack`: maps a cotangent on the packed stack back to image space."""
    return _synthesis(np.asarray(g), levels, channels, _join_by(lambda n: _analysis_matrix(n).T))


def unpack_adjoint(g: np.ndarray, levels: int) -> np.ndarray:
    """Adjoint of :func:`unpack`."""
    return _analysis(np.asarray(g), levels, _split_by(lambda n: _synthesis_matrix(n).T))
