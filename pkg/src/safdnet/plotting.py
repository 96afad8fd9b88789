"""Matplotlib figures for reports.  Uses the Agg backend; nothing is shown."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_META = {"Software": None}


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=100, metadata=_META)
    plt.close(fig)
    return os.fspath(path)


def plot_roc(fpr, tpr, auroc: float, path) -> str:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(fpr, tpr, lw=1.5, label=f"AUROC {auroc:.3f}")
    ax.plot([0, 1], [0, 1], ls=":", c="grey", lw=1)
    ax.set(xlabel="False positive rate", ylabel="True positive rate", xlim=(0, 1), ylim=(0, 1.01))
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_pr(recall, precision, auprc: float, prevalence: float, path) -> str:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.step(np.r_[0.0, recall], np.r_[precision[0] if len(precision) else 1.0, precision],
            where="post", lw=1.5, label=f"AUPRC {auprc:.3f}")
    ax.axhline(prevalence, ls=":", c="grey", lw=1)
    ax.set(xlabel="Recall", ylabel="Precision", xlim=(0, 1), ylim=(0, 1.01))
    ax.legend(loc="lower left")
    return _save(fig, path)


def plot_calibration(bins, path) -> str:
    fig, ax = plt.subplots(figsize=(4, 4))
    mp = [b.mean_pred for b in bins if b.count]
    fp = [b.frac_pos for b in bins if b.count]
    ax.plot([0, 1], [0, 1], ls=":", c="grey", lw=1)
    ax.plot(mp, fp, marker="o", lw=1.5)
    ax.set(xlabel="Mean predicted probability", ylabel="Observed frequency", xlim=(0, 1), ylim=(0, 1))
    return _save(fig, path)


def plot_mask(freqs_hz, mask, names: Sequence[str], path) -> str:
    fig, ax = plt.subplots(figsize=(7, 0.6 * len(names) + 1.2))
    im = ax.imshow(mask, aspect="auto", vmin=0, vmax=1, cmap="viridis", interpolation="nearest",
                   extent=(freqs_hz[0], freqs_hz[-1], len(names) - 0.5, -0.5))
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("Frequency (Hz)")
    fig.colorbar(im, ax=ax, label="mask")
    return _save(fig, path)


def plot_saliency(data, saliency, names: Sequence[str], fs: float, path) -> str:
    C, T = data.shape
    t = np.arange(T) / fs
    fig, axes = plt.subplots(C, 1, figsize=(7, 1.4 * C + 0.4), sharex=True, squeeze=False)
    top = float(saliency.max()) or 1.0
    for c, ax in enumerate(axes[:, 0]):
        ax.plot(t, data[c], lw=0.6, c="k")
        lo, hi = float(data[c].min()), float(data[c].max())
        ax.imshow(saliency[c][None], aspect="auto", cmap="Reds", vmin=0, vmax=top, alpha=0.6,
                  extent=(t[0], t[-1], lo, hi if hi > lo else lo + 1))
        ax.set_ylabel(names[c])
    axes[-1, 0].set_xlabel("Time (s)")
    return _save(fig, path)


def plot_ablation(rows, path) -> str:
    """Grouped bars of AUROC per model and horizon; rows are dicts from the ablate table."""
    models = list(dict.fromkeys(r["model"] for r in rows))
    horizons = sorted({r["horizon_min"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.8 / len(models)
    for i, m in enumerate(models):
        vals = [next((r["auroc"] for r in rows if r["model"] == m and r["horizon_min"] == h), np.nan)
                for h in horizons]
        ax.bar(np.arange(len(horizons)) + i * width, vals, width, label=m)
    ax.set_xticks(np.arange(len(horizons)) + 0.4 - width / 2, [f"{h} min" for h in horizons])
    ax.set(ylabel="AUROC", ylim=(0.5, 1.0))
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_training(tlog, path) -> str:
    ep = [r.epoch for r in tlog.epochs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ep, [r.train_loss for r in tlog.epochs], label="train loss")
    ax.set(xlabel="Epoch", ylabel="BCE")
    ax2 = ax.twinx()
    ax2.plot(ep, [r.dev_auroc for r in tlog.epochs], c="C1", label="dev AUROC")
    ax2.set_ylabel("dev AUROC")
    if tlog.best_epoch >= 0:
        ax.axvline(tlog.best_epoch, ls=":", c="grey")
    return _save(fig, path)
