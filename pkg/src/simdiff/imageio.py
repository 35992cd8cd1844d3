"""Minimal binary/ASCII PGM and PPM reading and 8-bit binary writing."""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        out.append(data[start:pos])
    return out, pos


def read_pnm(path) -> np.ndarray:
    """Read P2/P3/P5/P6 into a uint8 or uint16 array of shape [H, W, C] (C = 1 or 3)."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a PGM/PPM file")
    channels = 3 if magic in (b"P3", b"P6") else 1
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad header {w}x{h} maxval {maxval}")
    n = w * h * channels
    if magic in (b"P2", b"P3"):
        values = np.array(data[pos:].split(), dtype=np.int64)
        if values.size < n:
            raise ImageFormatError(f"{path}: truncated pixel data")
        arr = values[:n]
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise ImageFormatError(f"{path}: truncated pixel data")
        arr = np.frombuffer(raw, dtype=dtype)
    arr = arr.reshape(h, w, channels)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * 255.0 / maxval)
    return arr.astype(np.uint8)


def write_pnm(path, image: np.ndarray) -> None:
    """Write uint8 [H, W] / [H, W, 1] as P5, or [H, W, 3] as P6."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ImageFormatError("write_pnm expects uint8 pixels")
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageFormatError(f"cannot write image of shape {image.shape}")
    magic = b"P5" if img.shape[2] == 1 else b"P6"
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages the input interval [i*n_in/n_out, (i+1)*n_in/n_out)."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / m.sum(axis=1, keepdims=True)


def center_crop_resize(image: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to a square, then area-resize to ``size`` x ``size``. Float in, float out."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    img = img[top:top + side, left:left + side]
    if side == size:
        return img
    m = _area_matrix(side, size)
    return np.einsum("ih,hwc,jw->ijc", m, img, m)
