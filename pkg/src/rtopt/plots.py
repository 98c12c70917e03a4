"""Matplotlib figures rendered next to the CLI's CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_dvh", "plot_partition", "plot_bench"]


def plot_dvh(curves, path, compare=None, labels=("plan", "reference")) -> None:
    """DVH curves, one color per ROI; a comparison plan is drawn dashed."""
    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.cm.tab20(np.linspace(0, 1, max(len(curves), 2)))
    for curve, color in zip(curves, colors):
        ax.plot(curve.dose_grid, 100.0 * curve.volume_fraction,
                color=color, label=curve.roi_name)
    if compare is not None:
        for curve, color in zip(compare, colors):
            ax.plot(curve.dose_grid, 100.0 * curve.volume_fraction,
                    color=color, linestyle="--")
        ax.set_title(f"DVH: {labels[0]} (solid) vs {labels[1]} (dashed)")
    ax.set_xlabel("Dose (Gy)")
    ax.set_ylabel("Volume (%)")
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_partition(assignment, obj_items, cons_items, path) -> None:
    """Per-worker stacked bars of assigned term sizes, one panel per family.

    obj_items / cons_items: list of (term_id, nnz) as fed to the partitioner.
    """
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, items, part, title in (
            (axes[0], obj_items, assignment.objectives, "objective terms"),
            (axes[1], cons_items, assignment.constraints, "constraint terms")):
        k = part.num_workers
        bottoms = np.zeros(k)
        sizes = dict(items)
        for worker in range(k):
            for term in part.owned_by(worker):
                ax.bar(worker, sizes[term], bottom=bottoms[worker], width=0.8,
                       edgecolor="white", linewidth=0.4)
                bottoms[worker] += sizes[term]
        for worker in range(k):
            ax.text(worker, bottoms[worker], f"{int(bottoms[worker]):,}",
                    ha="center", va="bottom", fontsize=7)
        ax.set_title(title)
        ax.set_xlabel("worker")
        ax.set_xticks(range(k))
    axes[0].set_ylabel("assigned nnz")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bench(report, path) -> None:
    """Measured wall time and eval-only time vs workers, with the Amdahl line."""
    rows = sorted(report.rows, key=lambda r: r.workers)
    ks = [r.workers for r in rows]
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.errorbar(ks, [r.mean_wall_seconds for r in rows],
                yerr=[r.std_wall_seconds for r in rows],
                marker="^", linestyle="-", capsize=3, label="total")
    ax.plot(ks, [r.mean_eval_seconds for r in rows],
            marker="s", linestyle=":", label="function evaluation")
    ax.plot(ks, [r.amdahl_seconds for r in rows],
            color="red", linestyle="-", linewidth=1, label="Amdahl prediction")
    ax.set_xlabel("workers (0 = serial)")
    ax.set_ylabel("wall time (s)")
    ax.set_title(f"scaling, {report.iterations} iterations per run")
    ax.set_xticks(ks)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
