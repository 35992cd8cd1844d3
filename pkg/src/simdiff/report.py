"""Figures written next to the CSV/PNM outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_schedule(path, t, logsnr, weight, reference=None, label="schedule"):
    """logSNR(t) and the ELBO weight, optionally against a reference curve."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8, 3))
    ax0.plot(t, logsnr, label=label)
    if reference is not None:
        ax0.plot(t, reference, "--", color="gray", label="cosine")
    ax0.set_xlabel("t")
    ax0.set_ylabel("log SNR")
    ax0.legend(frameon=False)
    ax1.semilogy(t[1:-1], weight[1:-1])
    ax1.set_xlabel("t")
    ax1.set_ylabel("-d/dt log SNR")
    _save(fig, path)


def plot_loss_curve(path, points, oracle: float | None = None, window: int = 50):
    steps = np.array([p[0] for p in points])
    loss = np.array([p[1] for p in points])
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, loss, lw=0.5, alpha=0.4, color="C0")
    if len(loss) >= window:
        smooth = np.convolve(loss, np.ones(window) / window, mode="valid")
        ax.plot(steps[window - 1:], smooth, color="C0", label=f"{window}-step mean")
    if oracle is not None:
        ax.axhline(oracle, color="C3", ls="--", label="v=0 loss")
        ax.axhline(0.5 * oracle, color="C3", ls=":", label="half of it")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(frameon=False)
    _save(fig, path)


def plot_pooling_law(path, factors, ratios):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(factors, factors, "--", color="gray", label="ratio = s")
    ax.plot(factors, ratios, "o", label="measured")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("pooling window s")
    ax.set_ylabel("noise std ratio")
    ax.legend(frameon=False)
    _save(fig, path)


def image_grid(path, images, titles=None, ncols: int | None = None):
    """Show [-1, 1] images (H, W, C) in a grid."""
    n = len(images)
    ncols = ncols or min(n, 8)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.3 * ncols, 1.3 * nrows + 0.2), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for i, img in enumerate(images):
        img = np.clip((np.asarray(img) + 1.0) / 2.0, 0.0, 1.0)
        ax = axes.flat[i]
        ax.imshow(img[..., 0] if img.shape[-1] == 1 else img, cmap="gray", vmin=0, vmax=1,
                  interpolation="nearest")
        if titles is not None:
            ax.set_title(titles[i], fontsize=7)
    _save(fig, path)
