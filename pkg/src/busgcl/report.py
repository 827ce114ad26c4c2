"""Matplotlib rendering for run artifacts.

Every figure lands next to the delimited file it visualizes so a run
directory is self-describing: history curves beside history.csv, grid
charts beside the ablation CSV, the 2-D embedding map beside the
projection TSV.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

DPI = 150


def save_history_figure(history, path):
    """Loss terms and validation metrics over epochs."""
    epochs = [int(r["epoch"]) for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in (("total", "total"), ("rec", "ranking"), ("disp", "dispersing"),
                       ("cl_user", "contrastive user"), ("cl_item", "contrastive item")):
        series = [float(r[key]) for r in history]
        if any(v != 0 for v in series):
            ax1.plot(epochs, series, label=label, linewidth=1.2)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss (batch mean)")
    ax1.set_yscale("symlog")
    ax1.legend(fontsize=8)
    ax1.set_title("training losses")

    val_e = [int(r["epoch"]) for r in history if r["val_recall@20"] != ""]
    if val_e:
        ax2.plot(val_e, [float(r["val_recall@20"]) for r in history if r["val_recall@20"] != ""],
                 marker="o", markersize=3, label="Recall@20")
        ax2.plot(val_e, [float(r["val_ndcg@20"]) for r in history if r["val_ndcg@20"] != ""],
                 marker="s", markersize=3, label="NDCG@20")
        ax2.legend(fontsize=8)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation metric")
    ax2.set_title("validation")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_layer_sweep_figure(rows, path, at=20):
    """Metric curves against propagation depth."""
    layers = [int(r["layers"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(layers, [float(r[f"recall@{at}"]) for r in rows], marker="o", label=f"Recall@{at}")
    ax.plot(layers, [float(r[f"ndcg@{at}"]) for r in rows], marker="s", label=f"NDCG@{at}")
    ax.set_xlabel("propagation layers")
    ax.set_ylabel("metric")
    ax.set_xticks(layers)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_ablation_figure(rows, path, at=20):
    """Horizontal bars of Recall@N per grid variant."""
    labels = [r["variant"] for r in rows]
    values = [float(r[f"recall@{at}"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 0.5 * len(rows) + 1.5))
    ax.barh(range(len(rows)), values, color="#4878cf")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(f"Recall@{at}")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_projection_figure(coords, num_users, path):
    """User/item scatter of the 2-D embedding projection."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.scatter(coords[:num_users, 0], coords[:num_users, 1], s=4, alpha=0.5,
               label="users", color="#d65f5f")
    ax.scatter(coords[num_users:, 0], coords[num_users:, 1], s=4, alpha=0.3,
               label="items", color="#4878cf")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
