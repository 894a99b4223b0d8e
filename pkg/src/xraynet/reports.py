"""Report figures rendered next to the delimited outputs.

Each CLI report path pairs its CSV with a PNG figure: training curves
for the metrics history, the ROC trace, and an annotated confusion
matrix. Rendering is deterministic (no timestamps, fixed sizes) and
uses the Agg backend so it works without a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import ConfusionMatrix, RocCurve, auc
from .training import TrainHistory


def save_training_curves(history: TrainHistory, path: str) -> None:
    """Loss and accuracy vs epoch, train and validation together."""
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax_loss.plot(epochs, [r.train_loss for r in history], marker="o", label="train")
    ax_loss.plot(epochs, [r.val_loss for r in history], marker="s", label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss")
    ax_loss.legend()
    ax_loss.grid(alpha=0.3)
    ax_acc.plot(epochs, [r.train_acc for r in history], marker="o", label="train")
    ax_acc.plot(epochs, [r.val_acc for r in history], marker="s", label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    ax_acc.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_figure(curve: RocCurve, path: str) -> None:
    """ROC trace with the chance diagonal and the AUC in the legend."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    ax.plot(curve.fpr, curve.tpr, marker=".", label=f"AUC = {auc(curve):.3f}")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(cm: ConfusionMatrix, path: str) -> None:
    """Row-normalized heat cells annotated with counts and rates."""
    norm = cm.normalized()
    labels = ("NORMAL", "PNEUMONIA")
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(2):
        for j in range(2):
            color = "white" if norm[i, j] > 0.5 else "black"
            ax.text(j, i, f"{cm.counts[i, j]}\n{norm[i, j]:.2f}", ha="center", va="center", color=color)
    ax.set_xticks(np.arange(2), labels)
    ax.set_yticks(np.arange(2), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
