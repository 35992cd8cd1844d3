"""Datasets: synthetic class-conditional images with closed-form class means, and PNM folders."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .imageio import ImageFormatError, center_crop_resize, read_pnm

log = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("gaussian_blobs", "checker", "two_tone")
AMP_LOW, AMP_HIGH = 0.5, 1.0


class DatasetError(RuntimeError):
    pass


@dataclass
class SyntheticDataset:
    """Images ``base_c + gain * a * P_c`` with amplitude a ~ U(0.5, 1) per image.

    gaussian_blobs: P_c is a Gaussian bump whose center sits on a circle at angle
    2*pi*c/K, base -1, gain 2. checker: P_c is a +-1 checkerboard with period
    2^(c mod log2 d + 1). two_tone: P_c splits the image in halves along one of
    four orientations. Because a is independent of the pattern, the class mean
    is ``base + gain * 0.75 * P_c`` and the per-pixel variance is
    ``gain^2 * Var(a) * P_c^2``.
    """

    kind: str
    resolution: int
    num_classes: int
    channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic dataset {self.kind!r}; expected one of {SYNTHETIC_KINDS}")
        r = self.resolution
        if r < 2 or r & (r - 1):
            raise ValueError("resolution must be a power of two")
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        self._patterns = np.stack([self._pattern(c) for c in range(self.num_classes)])

    @property
    def _base_gain(self):
        return (-1.0, 2.0) if self.kind == "gaussian_blobs" else (0.0, 1.0)

    def _pattern(self, c: int) -> np.ndarray:
        d = self.resolution
        yy, xx = np.meshgrid(np.arange(d) + 0.5, np.arange(d) + 0.5, indexing="ij")
        if self.kind == "gaussian_blobs":
            ang = 2 * np.pi * c / self.num_classes
            cy, cx = d / 2 + d / 4 * np.sin(ang), d / 2 + d / 4 * np.cos(ang)
            width = d / 8
            return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        if self.kind == "checker":
            period = 2 ** (c % int(np.log2(d)) + 1)
            cell = period // 2
            return np.where(((yy // cell) + (xx // cell)) % 2 == 0, 1.0, -1.0)
        orient = c % 4
        if orient == 0:
            m = xx < d / 2
        elif orient == 1:
            m = yy < d / 2
        elif orient == 2:
            m = xx < yy
        else:
            m = xx + yy < d
        return np.where(m, 1.0, -1.0)

    def class_mean(self, c: int) -> np.ndarray:
        base, gain = self._base_gain
        mean = base + gain * 0.5 * (AMP_LOW + AMP_HIGH) * self._patterns[c]
        return np.repeat(mean[:, :, None], self.channels, axis=2)

    def class_variance(self, c: int) -> np.ndarray:
        _, gain = self._base_gain
        var_a = (AMP_HIGH - AMP_LOW) ** 2 / 12.0
        v = gain ** 2 * var_a * self._patterns[c] ** 2
        return np.repeat(v[:, :, None], self.channels, axis=2)

    def render(self, class_ids: np.ndarray, amplitudes: np.ndarray) -> np.ndarray:
        base, gain = self._base_gain
        imgs = base + gain * amplitudes[:, None, None] * self._patterns[class_ids]
        imgs = np.repeat(imgs[..., None], self.channels, axis=3)
        return np.clip(imgs, -1.0, 1.0).astype(np.float32)

    def batch(self, rng: np.random.Generator, n: int):
        ids = rng.integers(0, self.num_classes, size=n)
        amps = rng.uniform(AMP_LOW, AMP_HIGH, size=n)
        return self.render(ids, amps), ids

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        rng = np.random.default_rng(self.seed)
        while True:
            x, ids = self.batch(rng, 1)
            yield x[0], int(ids[0])


def dataset_synthetic(kind: str, resolution: int, num_classes: int, seed: int = 0,
                      channels: int = 1) -> SyntheticDataset:
    return SyntheticDataset(kind, resolution, num_classes, channels, seed)


@dataclass
class FolderDataset:
    """PGM/PPM images under ``root/<class>/``; classes are subfolders in lexicographic order."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def batch(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self.images), size=n)
        return self.images[idx], self.labels[idx]

    def __iter__(self):
        for img, label in zip(self.images, self.labels):
            yield img, int(label)


def dataset_folder(path, resolution: int, channels: int | None = None, seed: int = 0) -> FolderDataset:
    path = os.fspath(path)
    if not os.path.isdir(path):
        raise DatasetError(f"dataset folder not found: {path}")
    entries = sorted(os.listdir(path))
    subdirs = [e for e in entries if os.path.isdir(os.path.join(path, e))]
    groups = [(name, os.path.join(path, name)) for name in subdirs] or [("", path)]
    images, labels, names = [], [], []
    for label, (name, folder) in enumerate(groups):
        names.append(name)
        for fname in sorted(os.listdir(folder)):
            fpath = os.path.join(folder, fname)
            if not os.path.isfile(fpath) or not fname.lower().endswith((".pgm", ".ppm", ".pnm")):
                continue
            try:
                raw = read_pnm(fpath)
            except (ImageFormatError, OSError, ValueError) as e:
                log.warning("skipping unreadable image %s: %s", fpath, e)
                continue
            if channels is not None and raw.shape[2] != channels:
                raw = np.repeat(raw, channels, axis=2) if raw.shape[2] == 1 else raw.mean(axis=2, keepdims=True)
            img = center_crop_resize(raw.astype(np.float64), resolution)
            images.append((2.0 * img / 255.0 - 1.0).astype(np.float32))
            labels.append(label)
    if not images:
        raise DatasetError(f"no readable PGM/PPM images under {path}")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DatasetError(f"mixed channel counts in {path}: {sorted(shapes)}; set channels explicitly")
    return FolderDataset(np.stack(images), np.asarray(labels, dtype=np.int64), names, seed)
