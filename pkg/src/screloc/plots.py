"""Figure rendering for the CLI report paths.

Every reporting command writes delimited output first; these helpers render
a matplotlib figure next to each CSV for quick visual inspection. CSV stays
the machine-readable contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_trace(path, iterations, mean_loss, lr, tau) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(iterations, mean_loss, lw=0.8)
    axes[0].set_yscale("log")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("mean loss")
    axes[1].plot(iterations, lr, lw=0.8, color="tab:orange")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("learning rate")
    axes[2].plot(iterations, tau, lw=0.8, color="tab:green")
    axes[2].set_xlabel("iteration")
    axes[2].set_ylabel("tau (px)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_covis_histograms(path, edges, hist_covis, hist_non, n_threshold) -> None:
    mids = (np.asarray(edges)[:-1] + np.asarray(edges)[1:]) / 2
    width = edges[1] - edges[0]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.bar(mids, hist_covis, width=width, alpha=0.6, label=f"covis >= {n_threshold}")
    ax.bar(mids, hist_non, width=width, alpha=0.6, label=f"covis < {n_threshold}")
    ax.set_xlabel("angular encoding distance (deg)")
    ax.set_ylabel("fraction of pairs")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_covis_curve(path, lows, highs, rates, n_threshold) -> None:
    mids = (np.asarray(lows) + np.asarray(highs)) / 2
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(mids, rates, marker="o", ms=3)
    ax.set_xlabel("angular encoding distance (deg)")
    ax.set_ylabel(f"P(covis >= {n_threshold} | distance)")
    ax.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_errors(path, translation_errors, rotation_errors) -> None:
    t = np.asarray(translation_errors, dtype=float)
    r = np.asarray(rotation_errors, dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for ax, vals, label in ((axes[0], t, "translation error (m)"),
                            (axes[1], r, "rotation error (deg)")):
        finite = np.sort(vals[np.isfinite(vals)])
        frac = np.arange(1, len(finite) + 1) / max(len(vals), 1)
        if len(finite):
            ax.plot(finite, frac, drawstyle="steps-post")
            ax.set_xscale("log")
        ax.set_ylim(0, 1.02)
        ax.set_xlabel(label)
        ax.set_ylabel("fraction of frames")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_reconstruction(path, points, ids) -> None:
    points = np.asarray(points)
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    if len(points):
        ax.scatter(points[:, 0], points[:, 1], c=np.asarray(ids) % 20, cmap="tab20",
                   s=2, lw=0)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{len(points)} surviving points (top view)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_ablation(path, rows) -> None:
    """rows: (variant, seed, train_med_t, heldout_med_t)."""
    variants = []
    for row in rows:
        if row[0] not in variants:
            variants.append(row[0])
    fig, ax = plt.subplots(figsize=(7, 3.6))
    xs = np.arange(len(variants))
    for split, offset, color in (("train", -0.17, "tab:blue"), ("heldout", 0.17, "tab:red")):
        idx = 2 if split == "train" else 3
        med = []
        for v in variants:
            vals = [row[idx] for row in rows if row[0] == v and np.isfinite(row[idx])]
            med.append(np.median(vals) if vals else np.nan)
        ax.bar(xs + offset, med, width=0.3, color=color, label=split)
    ax.set_xticks(xs)
    ax.set_xticklabels(variants, rotation=20, ha="right")
    ax.set_ylabel("median translation error (m)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_mae_comparison(path, rows) -> None:
    """rows: (seed, k, mae)."""
    ks = sorted({row[1] for row in rows})
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for i, k in enumerate(ks):
        vals = [row[2] for row in rows if row[1] == k]
        ax.scatter([i] * len(vals), vals, s=18)
        ax.scatter([i], [np.median(vals)], marker="_", s=600, color="black")
    ax.set_xticks(range(len(ks)))
    ax.set_xticklabels([f"k={k}" for k in ks])
    ax.set_ylabel("MAE (grid units)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_prior_scatter(path, samples, centers) -> None:
    samples = np.asarray(samples)
    centers = np.asarray(centers)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.scatter(samples[:, 0], samples[:, 1], s=1.5, alpha=0.25, lw=0)
    ax.scatter(centers[:, 0], centers[:, 1], marker="*", color="red", s=90,
               label="centers")
    ax.set_aspect("equal")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_room_rates(path, rates_by_k) -> None:
    """rates_by_k: {k: list of per-room success rates}."""
    fig, ax = plt.subplots(figsize=(6.5, 3.4))
    for k, rates in sorted(rates_by_k.items()):
        ax.plot(range(len(rates)), rates, marker="o", ms=4, label=f"k={k}")
    ax.set_xlabel("room index")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
