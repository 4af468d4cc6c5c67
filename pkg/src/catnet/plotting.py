"""Figures for the report command. Always renders off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def size(scale=1.0, ratio=0.8):
    width = 5.0 * scale
    return [width, width * ratio]


def accuracy_heatmap(R: np.ndarray, path, title: str = "") -> None:
    """Accuracy matrix as an image; lighter cells are more accurate."""
    n = R.shape[0]
    fig, ax = plt.subplots(figsize=size(0.2 * n + 0.8, 0.9))
    cmap = matplotlib.colormaps["gray"].copy()
    cmap.set_bad("#9db8d4")  # undefined cells (task not yet learned)
    im = ax.imshow(np.ma.masked_invalid(R), cmap=cmap, vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), [f"Te{j}" for j in range(n)])
    ax.set_yticks(range(n), [f"M{i}" for i in range(n)])
    ax.set_xlabel("test data of task")
    ax.set_ylabel("model after task")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def mean_summary(classes, per_stream: list[np.ndarray], path, labels=None) -> None:
    """Per-class feature-averaged means, one line per stream."""
    labels = labels or [f"stream {s}" for s in range(len(per_stream))]
    fig, ax = plt.subplots(figsize=size(1.4, 0.45))
    x = np.arange(len(classes))
    for vals, lab in zip(per_stream, labels):
        ax.plot(x, vals, marker="o", ms=3, lw=1, label=lab)
    ax.set_xticks(x, [str(c) for c in classes], fontsize=7)
    ax.set_xlabel("class")
    ax.set_ylabel("mean feature value")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
