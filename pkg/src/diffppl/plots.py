"""Static SVG figures for experiment outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    # glyphs as paths and a fixed id salt: no external fonts, stable output
    "svg.fonttype": "path",
    "svg.hashsalt": "diffppl",
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def loss_curve(losses, path, *, title: str | None = None) -> Path:
    """Loss per gradient-descent iteration."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(np.arange(len(losses)), losses, color="#1f4e79")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))


def posterior_hist(samples, path, *, mean: float, stddev: float, label: str = "T") -> Path:
    """Histogram of retained samples with a Normal density of the given moments overlaid."""
    samples = np.asarray(samples, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.hist(samples, bins=40, density=True, color="#9ecae1", edgecolor="white", linewidth=0.4)
        grid = np.linspace(samples.min() - stddev, samples.max() + stddev, 400)
        dens = np.exp(-0.5 * ((grid - mean) / stddev) ** 2) / (stddev * np.sqrt(2 * np.pi))
        ax.plot(grid, dens, color="#b22222", label="closed form")
        ax.axvline(samples.mean(), color="#1f4e79", linestyle="--", linewidth=0.9, label="sample mean")
        ax.set_xlabel(label)
        ax.set_ylabel("density")
        ax.legend(frameon=False)
        return _save(fig, Path(path))
