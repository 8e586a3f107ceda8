"""Matplotlib renderings saved next to the delimited outputs.

Every report path writes figures as files: training curves beside
``metrics.csv``, a grouped bar chart beside ``ablation.csv``, and qualitative
prediction panels beside the predicted label maps.  The Agg backend is forced
so rendering works headless; call these from one thread only.
"""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

# background, fluid ring, mid ring, core
_CLASS_COLORS = np.array([
    [0.05, 0.05, 0.08],
    [0.22, 0.45, 0.85],
    [0.65, 0.60, 0.55],
    [0.95, 0.92, 0.80],
])


def colorize_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Label map to an RGB image with one fixed color per class."""
    if num_classes <= len(_CLASS_COLORS):
        palette = _CLASS_COLORS[:num_classes]
    else:
        palette = plt.get_cmap("viridis")(np.linspace(0, 1, num_classes))[:, :3]
    return palette[np.asarray(labels)]


def training_curves(records, path) -> None:
    """Loss and Dice trajectories for one training run."""
    epochs = [r.epoch for r in records]
    fig, (ax_loss, ax_dice) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r.loss for r in records], color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.grid(alpha=0.3)
    ax_dice.plot(epochs, [r.dc for r in records], label="train DC")
    ax_dice.plot(epochs, [r.dc_val for r in records], label="val DC")
    ax_dice.set_xlabel("epoch")
    ax_dice.set_ylabel("Dice")
    ax_dice.set_ylim(0.0, 1.02)
    ax_dice.legend(loc="lower right")
    ax_dice.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def segmentation_panel(images, truths, preds, num_classes, path, max_rows=4) -> None:
    """Rows of (input, reference labels, predicted labels)."""
    rows = min(len(images), max_rows)
    fig, axes = plt.subplots(rows, 3, figsize=(7, 2.3 * rows), squeeze=False)
    for r in range(rows):
        axes[r][0].imshow(images[r], cmap="gray", vmin=0.0, vmax=1.0)
        axes[r][1].imshow(colorize_labels(truths[r], num_classes))
        axes[r][2].imshow(colorize_labels(preds[r], num_classes))
        for c in range(3):
            axes[r][c].set_axis_off()
    for c, title in enumerate(("input", "reference", "prediction")):
        axes[0][c].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_chart(seeds, cce_scores, fcce_scores, path) -> None:
    """Per-seed validation Dice for the two loss arms, with mean lines."""
    x = np.arange(len(seeds))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(x - width / 2, cce_scores, width, label="CCE", color="tab:gray")
    ax.bar(x + width / 2, fcce_scores, width, label="FCCE (best weight)",
           color="tab:blue")
    ax.axhline(float(np.mean(cce_scores)), color="tab:gray", ls="--", lw=1)
    ax.axhline(float(np.mean(fcce_scores)), color="tab:blue", ls="--", lw=1)
    ax.set_xticks(x)
    ax.set_xticklabels([str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylabel("val DC")
    lo = min(min(cce_scores), min(fcce_scores))
    ax.set_ylim(max(0.0, lo - 0.05), 1.01)
    ax.legend(loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def phantom_montage(images, labels, num_classes, path, max_cols=8) -> None:
    """Top row intensities, bottom row label maps, for dataset inspection."""
    cols = min(len(images), max_cols)
    fig, axes = plt.subplots(2, cols, figsize=(1.6 * cols, 3.4), squeeze=False)
    for c in range(cols):
        axes[0][c].imshow(images[c], cmap="gray", vmin=0.0, vmax=1.0)
        axes[1][c].imshow(colorize_labels(labels[c], num_classes))
        axes[0][c].set_axis_off()
        axes[1][c].set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
