"""Matplotlib figures written next to the JSON/text outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_log(log, path):
    """Mean loss (log scale) and running train accuracy per epoch."""
    epochs = [r["epoch"] for r in log]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.semilogy(epochs, [max(r["mean_loss"], 1e-12) for r in log], color="k", lw=1.2)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("mean BCE")
        ax_acc.plot(epochs, [r["train_acc"] for r in log], color="C0", lw=1.2)
        ax_acc.set_ylim(0, 1.02)
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("train accuracy")
        return _save(fig, path)


def plot_reports(reports, path):
    """Grouped bars: accuracy and per-class F1 for each model variant."""
    names = [r.name for r in reports]
    cols = {"Accuracy": [r.accuracy for r in reports],
            "Fake F1": [r.fake.f1 for r in reports],
            "Real F1": [r.real.f1 for r in reports]}
    x = np.arange(len(names))
    width = 0.8 / len(cols)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(names)), 3.2))
        for i, (label, vals) in enumerate(cols.items()):
            ax.bar(x + (i - 1) * width, vals, width, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False, ncol=3, loc="lower center")
        return _save(fig, path)


def plot_inconsistency(diag: dict, path):
    """Inconsistency weight per image patch and text token; ground-truth patches marked."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 2.8))
        for ax, key, title in ((axes[0], "r_is_image", "image patches"),
                               (axes[1], "r_is_text", "text tokens")):
            scores = diag.get(key)
            ax.set_title(title)
            if scores is None:
                ax.text(0.5, 0.5, "branch disabled", ha="center", transform=ax.transAxes)
                continue
            incon = 1.0 - np.asarray(scores)
            colors = ["C0"] * len(incon)
            if key == "r_is_image":
                for i in diag.get("perturbed_patches") or []:
                    colors[i] = "C3"
            ax.bar(np.arange(len(incon)), incon, color=colors)
            lo = float(incon.min())
            ax.set_ylim(max(0.0, lo - 0.05 * (1 - lo + 1e-9)), 1.0)
            ax.set_xlabel("position")
        axes[0].set_ylabel("1 - consistency score")
        fig.suptitle(f"{diag['id']}  y'={diag['y_pred']:.3f}  sim={diag['sim']:.3f}")
        return _save(fig, path)
