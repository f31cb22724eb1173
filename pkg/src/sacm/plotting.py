"""SVG heatmaps, contour line plots and box plots (byte-reproducible)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import LayerContour, SimilarityMatrix  # noqa: E402

# fixed ids and no timestamp, so identical inputs give identical bytes
plt.rcParams["svg.hashsalt"] = "sacm"
plt.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata=_META, bbox_inches="tight")
    plt.close(fig)


def heatmap_svg(matrix: SimilarityMatrix, path: str | Path, title: str = "") -> None:
    n = len(matrix.labels)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    im = ax.imshow(matrix.values, vmin=0, vmax=100, cmap="viridis")
    ax.set_xticks(range(n), matrix.labels, rotation=90, fontsize=7)
    ax.set_yticks(range(n), matrix.labels, fontsize=7)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{matrix.values[i, j]:.0f}", ha="center", va="center", fontsize=6, color="w")
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def contour_svg(contours: Mapping[str, LayerContour], path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, c in contours.items():
        layers = [l for l, _ in c.entries]
        ax.plot(layers, c.values(), marker="o", label=label)
    ax.set_xlabel("layer")
    ax.set_ylabel("mean NIE of selected neurons")
    ax.legend(fontsize=6)
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def bars_svg(labels: Sequence[str], series: Mapping[str, Sequence[float]], path: str | Path,
             ylabel: str = "", log: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(labels) * len(series)), 4))
    width = 0.8 / max(1, len(series))
    x = np.arange(len(labels))
    for i, (name, vals) in enumerate(series.items()):
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + 0.4 - width / 2, labels, rotation=60, fontsize=7, ha="right")
    ax.set_ylabel(ylabel)
    if log:
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    _save(fig, path)


def boxplot_svg(groups: Mapping[str, Sequence[float]], path: str | Path, ylabel: str = "probability") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(groups)), 4))
    ax.boxplot(list(groups.values()))
    ax.set_xticks(range(1, len(groups) + 1), list(groups), rotation=60, fontsize=7, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel(ylabel)
    _save(fig, path)
