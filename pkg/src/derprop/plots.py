"""Figure rendering for the report paths (training curves, variant bars).

Uses the Agg backend and writes through a temp file + rename; the PNG
bytes are deterministic for identical inputs so figures participate in
the byte-identical-run guarantee.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _atomic_savefig(fig, path) -> None:
    tmp = f"{path}.tmp"
    fig.savefig(tmp, format="png", dpi=110)
    plt.close(fig)
    os.replace(tmp, path)


def save_training_curves(metrics, path) -> None:
    """Loss parts and mIoU against epoch, side by side."""
    epochs = [m.epoch for m in metrics]
    fig, (ax_loss, ax_miou) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [m.loss_ce for m in metrics], label="CE")
    ax_loss.plot(epochs, [m.loss_kl for m in metrics], label="KL")
    ax_loss.plot(epochs, [m.loss_der for m in metrics], label="derivative")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_miou.plot(epochs, [m.miou_train for m in metrics], label="train")
    ax_miou.plot(epochs, [m.miou_val for m in metrics], label="val")
    ax_miou.set_xlabel("epoch")
    ax_miou.set_ylabel("mIoU")
    ax_miou.set_ylim(0.0, 1.0)
    ax_miou.legend(fontsize=8)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_variant_bars(results: dict, path) -> None:
    """Final validation mIoU per derivative-operation variant."""
    names = list(results)
    values = [results[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.bar(range(len(names)), values, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("final val mIoU")
    ax.set_ylim(0.0, 1.0)
    for x, v in enumerate(values):
        ax.text(x, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_slack_histogram(slacks, path, title: str = "bound slack") -> None:
    """Distribution of (bound - observed) margins from a verification run."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.hist(slacks, bins=40, color="#4878a8")
    ax.set_xlabel("slack")
    ax.set_ylabel("count")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _atomic_savefig(fig, path)
