"""Figures written next to the machine-readable reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 8,
    "svg.hashsalt": "shiftcast",  # stable element ids across runs
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_attention(payload: Mapping, path) -> Path:
    """Heatmap per decoder layer: rows are output tokens, columns prompt tokens."""
    layers = [np.asarray(m) for m in payload["layers"]]
    prompt, output = payload["prompt_tokens"], payload["output_tokens"]
    width = max(6.0, 0.18 * len(prompt))
    fig, axes = plt.subplots(len(layers), 1, figsize=(width, 0.35 * len(output) * len(layers) + 1.5),
                             squeeze=False)
    for i, (ax, mat) in enumerate(zip(axes[:, 0], layers)):
        im = ax.imshow(mat, cmap="hot", aspect="auto", vmin=0.0, interpolation="nearest")
        ax.set_xticks(range(len(prompt)))
        ax.set_xticklabels(prompt, rotation=90)
        ax.set_yticks(range(len(output)))
        ax.set_yticklabels(output)
        ax.set_title(f"decoder layer {i} cross-attention")
        fig.colorbar(im, ax=ax, fraction=0.02, pad=0.01)
    return _save(fig, path)


def plot_sweep(param: str, values: Sequence, rmse: Sequence[Sequence[float]],
               mae: Sequence[Sequence[float]], path) -> Path:
    """RMSE and MAE (mean with std bars over seeds) against one swept setting."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
    x = np.arange(len(values))
    for ax, runs, label in ((ax1, rmse, "RMSE"), (ax2, mae, "MAE")):
        arr = [np.asarray(r, dtype=float) for r in runs]
        ax.errorbar(x, [a.mean() for a in arr], yerr=[a.std() for a in arr],
                    marker="o", capsize=3, color="tab:red")
        ax.set_xticks(x)
        ax.set_xticklabels([str(v) for v in values])
        ax.set_xlabel(param)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(results: Mapping[str, Sequence[float]], path, metric: str = "RMSE") -> Path:
    names = list(results)
    arr = [np.asarray(results[n], dtype=float) for n in names]
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 1.5, 2.8))
    ax.bar(range(len(names)), [a.mean() for a in arr], yerr=[a.std() for a in arr],
           capsize=3, color="0.6", edgecolor="k")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20)
    ax.set_ylabel(metric)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_training(epochs: Sequence[Mapping], path) -> Path:
    """Training losses and validation RMSE per epoch."""
    ep = [e["epoch"] for e in epochs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
    for key, label in (("loss_nl", "L_N"), ("loss_mob", "L_M"), ("loss", "L")):
        ys = [e[key] for e in epochs]
        if any(y > 0 for y in ys):  # a disabled branch reports zeros
            ax1.plot(ep, ys, label=label, color="k" if key == "loss" else None)
    ax1.set_xlabel("epoch")
    if all(e["loss"] > 0 for e in epochs):
        ax1.set_yscale("log")
    ax1.legend()
    if any(e["val_rmse"] is not None for e in epochs):
        ax2.plot(ep, [e["val_rmse"] for e in epochs], marker=".", color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation RMSE")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
