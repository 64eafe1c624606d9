"""Matplotlib figure rendering for the report paths (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_bench_curves(results, path) -> None:
    """Median wall time vs pair count, one line per strategy, log-log axes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    strategies = sorted({r.strategy for r in results})
    for strategy in strategies:
        rows = sorted((r for r in results if r.strategy == strategy),
                      key=lambda r: r.pair_count)
        ax.plot(
            [r.pair_count for r in rows],
            [r.median_seconds * 1e3 for r in rows],
            marker="o",
            label=strategy,
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("instance pairs")
    ax.set_ylabel("median wall time (ms)")
    ax.set_title("pairwise inference cost vs pair count")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_ap_bars(report, path) -> None:
    """Per-class AP bars with the three mAP summary lines."""
    classes = sorted(report.per_class_ap)
    aps = [report.per_class_ap[c] for c in classes]
    labels = [f"a{a}/o{o}" for a, o in classes]
    colors = [
        "tab:orange" if report.gt_counts[c] < report.rare_threshold else "tab:blue"
        for c in classes
    ]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(classes)), 4))
    ax.bar(range(len(classes)), aps, color=colors)
    ax.axhline(report.map_full, color="black", linestyle="--", linewidth=1,
               label=f"full mAP {report.map_full:.3f}")
    ax.set_xticks(range(len(classes)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("average precision")
    ax.set_title("per-class AP (orange = rare)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_loss_curve(epoch_losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(epoch_losses)), epoch_losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
