"""Figure rendering for reports: written to files next to the CSV/JSON."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_report_figures(report, out_dir) -> list[Path]:
    """Method-comparison bar charts (sparsity/savings, accuracy, speedup)."""
    out_dir = Path(out_dir)
    written = []
    methods = [r.method for r in report.results]
    x = range(len(methods))

    fig, ax = plt.subplots(figsize=(6, 4))
    w = 0.35
    ax.bar([i - w / 2 for i in x], [r.sparsity for r in report.results],
           w, label="weight sparsity")
    ax.bar([i + w / 2 for i in x], [r.savings_fraction for r in report.results],
           w, label="crossbar savings")
    ax.set_xticks(list(x), methods)
    ax.set_ylim(0, 1)
    ax.set_ylabel("fraction")
    ax.set_title("Sparsity vs crossbar savings per method")
    ax.legend()
    p = out_dir / "sparsity_savings.png"
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(list(x), [r.final_accuracy for r in report.results], 0.5,
           label="pruned, retrained")
    for i, r in enumerate(report.results):
        ax.hlines(r.baseline_accuracy, i - 0.3, i + 0.3, colors="k",
                  linestyles="--", label="unpruned baseline" if i == 0 else None)
    ax.set_xticks(list(x), methods)
    ax.set_ylabel("test accuracy")
    ax.set_title("Retrain-from-scratch accuracy vs baseline")
    ax.legend()
    p = out_dir / "accuracy.png"
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(list(x), [r.iso_area_speedup for r in report.results], 0.5, color="tab:green")
    ax.axhline(1.0, color="k", linewidth=0.8)
    ax.set_xticks(list(x), methods)
    ax.set_ylabel("speedup over unpruned")
    ax.set_title("Iso-area pipelined training speedup")
    p = out_dir / "speedup.png"
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written


def render_layer_profile(plan, out_path) -> Path:
    """Per-layer crossbar requirement and stage time for a replication plan."""
    timings = plan.timings()
    names = [s.layer for s in plan.stages]
    xbars = [r * s.weight_xbars + s.act_xbars
             for r, s in zip(plan.replication, plan.stages)]
    times = [t.time_s * 1e6 for t in timings]
    x = range(len(names))
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.bar(list(x), xbars, 0.6, color="tab:blue", label="crossbars")
    ax1.set_ylabel("crossbars", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(list(x), times, "o-", color="tab:red", label="stage time")
    ax2.set_ylabel("stage time (us)", color="tab:red")
    ax1.set_xticks(list(x), names, rotation=45, ha="right")
    ax1.set_title("Per-layer crossbars and pipeline stage time")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_savings_per_layer(report, out_path) -> Path:
    """Weight-crossbar counts per layer, pruned vs unpruned (footprint report)."""
    names = [l.name for l in report.layers]
    x = range(len(names))
    w = 0.4
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - w / 2 for i in x], [l.xbars_unpruned for l in report.layers],
           w, label="unpruned")
    ax.bar([i + w / 2 for i in x], [l.xbars_pruned for l in report.layers],
           w, label="pruned")
    ax.set_xticks(list(x), names, rotation=45, ha="right")
    ax.set_ylabel("weight crossbars")
    ax.set_title("Per-layer weight crossbars after compaction")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
