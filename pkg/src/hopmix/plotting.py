"""Figures written next to the CSV outputs (Agg backend, no global pyplot state)."""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=110)


def plot_metrics(rows, path) -> None:
    """Loss and accuracy curves from metrics rows."""
    ep = [r.epoch for r in rows]
    fig = Figure(figsize=(8, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(ep, [r.train_loss for r in rows], "o-", label="train")
    ax1.plot(ep, [r.val_loss for r in rows], "s-", label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax1.legend()
    ax2.plot(ep, [r.train_acc for r in rows], "o-", label="train")
    ax2.plot(ep, [r.val_acc for r in rows], "s-", label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("top-1 accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    _save(fig, path)


def plot_kappa(rows, path) -> None:
    """Measured contraction ratio per iMLP layer against epoch."""
    by_layer = defaultdict(list)
    for epoch, layer, kappa in rows:
        by_layer[layer].append((epoch, kappa))
    fig = Figure(figsize=(5, 3.2))
    ax = fig.subplots()
    for layer, pts in sorted(by_layer.items()):
        e, k = zip(*pts)
        ax.plot(e, k, "o-", label=f"layer {layer}")
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("kappa")
    if by_layer:
        ax.legend(fontsize="small")
    _save(fig, path)


def plot_probe(rows, path) -> None:
    """Mean Norm_a and Cos_a per layer (log scale for the norm)."""
    norm = defaultdict(lambda: defaultdict(list))
    cos = defaultdict(lambda: defaultdict(list))
    for layer, _sample, a, n_a, c_a in rows:
        norm[layer][a].append(n_a)
        if not np.isnan(c_a):
            cos[layer][a].append(c_a)
    fig = Figure(figsize=(8, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    for layer in sorted(norm):
        a = sorted(norm[layer])
        ax1.semilogy(a, [np.mean(norm[layer][i]) for i in a], "o-", label=f"layer {layer}")
        ac = sorted(cos[layer])
        ax2.plot(ac, [np.mean(cos[layer][i]) for i in ac], "o-", label=f"layer {layer}")
    ax1.set_xlabel("iteration a")
    ax1.set_ylabel("Norm_a")
    ax2.set_xlabel("iteration a")
    ax2.set_ylabel("Cos_a")
    if norm:
        ax1.legend(fontsize="small")
    _save(fig, path)


def plot_trajectory(times, norms, energy, path) -> None:
    """Per-layer state norms and, when available, the energy along a trajectory."""
    norms = np.asarray(norms)
    panels = 2 if energy is not None else 1
    fig = Figure(figsize=(4 * panels, 3.2))
    axes = np.atleast_1d(fig.subplots(1, panels))
    for k in range(norms.shape[1]):
        axes[0].plot(times, norms[:, k], label=f"layer {k + 1}")
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("L2 norm")
    axes[0].legend(fontsize="small")
    if energy is not None:
        axes[1].plot(times, energy)
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("energy")
    _save(fig, path)


def plot_per_class(per_class, path) -> None:
    acc = np.asarray(per_class, dtype=float)
    fig = Figure(figsize=(5, 3.2))
    ax = fig.subplots()
    ax.bar(np.arange(acc.size), np.nan_to_num(acc))
    ax.set_xlabel("class")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1.02)
    _save(fig, path)
