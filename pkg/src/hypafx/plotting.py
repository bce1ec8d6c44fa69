"""PNG figures for reports; uses the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ConfusionMatrix  # noqa: E402


def plot_confusion(cm: ConfusionMatrix, path, title: str = "") -> None:
    counts = np.asarray(cm.counts, dtype=np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    K = len(cm.labels)
    size = max(4.0, 0.45 * K + 2.5)
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(K), cm.labels, rotation=90, fontsize=7)
    ax.set_yticks(range(K), cm.labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(K):
        for j in range(K):
            if counts[i, j]:
                ax.text(j, i, int(counts[i, j]), ha="center", va="center", fontsize=6,
                        color="white" if frac[i, j] > 0.5 else "black")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history: list[dict], path, title: str = "") -> None:
    fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(6, 5), sharex=True,
                                    gridspec_kw={"height_ratios": [3, 1]})
    if history:
        ep = [h["epoch"] for h in history]
        ax.plot(ep, [h["train_loss"] for h in history], label="train")
        ax.plot(ep, [h["val_loss"] for h in history], label="validation")
        ax_lr.semilogy(ep, [h["lr"] for h in history], color="gray")
        best = min(history, key=lambda h: h["val_loss"])
        ax.axvline(best["epoch"], color="k", ls=":", lw=1)
        ax.legend()
    ax.set_ylabel("cross-entropy")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("epoch")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
