"""Report rendering: delimited tables plus matplotlib figures saved to files.

Every report path pairs a CSV with a PNG so results are both greppable
and glanceable.  All figures use the non-interactive Agg backend.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .clustering import ClusterAssignment  # noqa: E402
from .evaluation import RetrievalReport  # noqa: E402


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return os.fspath(path)


def cluster_sizes_figure(assignment: ClusterAssignment, path) -> str:
    """Bar chart of cluster sizes, noise tallied separately."""
    sizes = assignment.sizes()
    noise = sum(1 for label in assignment.labels if label == -1)
    labels = [str(k) for k in sorted(sizes)]
    values = [sizes[k] for k in sorted(sizes)]
    if noise:
        labels.append("noise")
        values.append(noise)
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(labels) + 2), 3.5))
    ax.bar(range(len(values)), values, color="#4878cf")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel("cluster")
    ax.set_ylabel("members")
    ax.set_title(f"{assignment.cluster_count} clusters over {len(assignment.labels)} points")
    return _save(fig, path)


def cluster_sweep_figure(epsilons, ari_values, f1_values, path) -> str:
    """ARI and pairwise F1 against the epsilon sweep."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(epsilons, ari_values, marker="o", label="ARI")
    ax.plot(epsilons, f1_values, marker="s", label="pairwise F1")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("score")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    ax.set_title("clustering quality vs epsilon")
    return _save(fig, path)


def retrieval_metrics_figure(report: RetrievalReport, path) -> str:
    """Grouped bars for hit/precision/recall/MAP per cutoff, plus MRR."""
    ks = sorted(report.hit_at)
    series = [
        ("hit", [report.hit_at[k] for k in ks]),
        ("precision", [report.precision_at[k] for k in ks]),
        ("recall", [report.recall_at[k] for k in ks]),
        ("map", [report.map_at[k] for k in ks]),
    ]
    width = 0.2
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for offset, (name, values) in enumerate(series):
        positions = [i + (offset - 1.5) * width for i in range(len(ks))]
        ax.bar(positions, values, width=width, label=name)
    ax.axhline(report.mrr, linestyle="--", color="gray", label=f"MRR {report.mrr:.3f}")
    ax.set_xticks(range(len(ks)))
    ax.set_xticklabels([f"@{k}" for k in ks])
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title(f"retrieval over {report.query_count} queries")
    return _save(fig, path)


def pass_rate_figure(per_benchmark: dict[str, float], micro: float, macro: float, path) -> str:
    """Per-benchmark Pass@1 bars with micro/macro reference lines."""
    names = list(per_benchmark)
    values = [per_benchmark[name] for name in names]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names) + 2), 3.5))
    ax.bar(range(len(names)), values, color="#6aa84f")
    ax.axhline(micro, linestyle="--", color="black", label=f"micro {micro:.3f}")
    ax.axhline(macro, linestyle=":", color="gray", label=f"macro {macro:.3f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Pass@1")
    ax.legend(fontsize=8)
    return _save(fig, path)


def learn_paths_figure(path_counts: dict[str, int], path) -> str:
    """Bar chart of learn-step outcomes (refined/expanded/unchanged)."""
    names = ["refined", "expanded", "unchanged"]
    values = [path_counts.get(name, 0) for name in names]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar(names, values, color=["#4878cf", "#6aa84f", "#b0b0b0"])
    ax.set_ylabel("problems")
    ax.set_title("online learning outcomes")
    return _save(fig, path)
