"""Matplotlib renderers for the CLI report path.

Each function takes already-computed results and writes one PNG; nothing in
here feeds back into the numerics, and the analysis layer never imports this
module.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(traces_by_seed: dict, path) -> None:
    fig, (ax_total, ax_parts) = plt.subplots(1, 2, figsize=(10, 4))
    for seed, trace in traces_by_seed.items():
        steps = [r.step for r in trace.steps]
        ax_total.plot(steps, [r.l_total for r in trace.steps], label=f"seed {seed}")
    ax_total.set_xlabel("step")
    ax_total.set_ylabel("total loss")
    ax_total.legend(fontsize=8)

    first = next(iter(traces_by_seed.values()))
    steps = [r.step for r in first.steps]
    for name, pick in (("clip", lambda r: r.l_clip), ("inter", lambda r: r.l_inter),
                       ("intra", lambda r: r.l_intra)):
        ax_parts.plot(steps, [pick(r) for r in first.steps], label=name)
    ax_parts.set_xlabel("step")
    ax_parts.set_ylabel("component loss")
    ax_parts.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_lr_curve(rows, best_lr: float, path) -> None:
    lrs = [r[0] for r in rows]
    means = [r[1] for r in rows]
    stds = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(lrs, means, yerr=stds, marker="o")
    ax.axvline(best_lr, color="tab:red", linestyle="--", linewidth=1, label=f"best {best_lr:g}")
    ax.set_xscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("mean accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_beta_heatmap(result, path) -> None:
    mean = np.asarray(result.mean)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(mean, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(result.beta_v_grid)), [f"{b:g}" for b in result.beta_v_grid])
    ax.set_yticks(range(len(result.beta_t_grid)), [f"{b:g}" for b in result.beta_t_grid])
    ax.set_xlabel("beta_v")
    ax.set_ylabel("beta_t")
    fig.colorbar(im, ax=ax, label="mean accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_projection(hull_result, labels, path) -> None:
    pts = hull_result.projection
    fig, ax = plt.subplots(figsize=(5.5, 5))
    labels = np.asarray(labels)
    for c in sorted(set(labels.tolist())):
        cloud = pts[labels == c]
        ax.scatter(cloud[:, 0], cloud[:, 1], s=12, label=f"class {c}")
        hull = hull_result.hulls.get(c)
        if hull is not None and hull.shape[0] >= 3:
            ring = np.vstack([hull, hull[:1]])
            ax.plot(ring[:, 0], ring[:, 1], linewidth=1)
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_base_new(result, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    names = ["base", "new", "harmonic"]
    vals = [result.base_mean, result.new_mean, result.harmonic_mean_of_means]
    errs = [result.base_std, result.new_std, 0.0]
    ax.bar(names, vals, yerr=errs, color=["tab:blue", "tab:orange", "tab:green"])
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
