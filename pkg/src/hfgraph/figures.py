"""Figure rendering for run reports.  Every function writes a PNG next to
the delimited artifact it visualizes; nothing here opens a display.
"""
from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import networkx as nx
import numpy as np

from .interpret import _GROUP_COLORS, GROUPS, Neighborhood

_DPI = 130


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def fig_roc(path, roc_pts: np.ndarray, auroc: Optional[float] = None) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    ax.plot(roc_pts[:, 0], roc_pts[:, 1], lw=1.6, color="tab:blue")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    title = "ROC" if auroc is None else f"ROC (AUROC={auroc:.4f})"
    ax.set_title(title)
    _finish(fig, path)


def fig_pr(path, pr_pts: np.ndarray, auprc: Optional[float] = None) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    ax.step(pr_pts[:, 0], pr_pts[:, 1], where="post", lw=1.6, color="tab:orange")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_ylim(0.0, 1.05)
    title = "Precision-Recall" if auprc is None else f"Precision-Recall (AUPRC={auprc:.4f})"
    ax.set_title(title)
    _finish(fig, path)


def fig_history(path, history: list[dict], title: str = "training history") -> None:
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [row["train_loss"] for row in history], color="tab:red", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(epochs, [row["val_f1"] for row in history], color="tab:blue", label="val F1")
    ax2.plot(
        epochs, [row["val_auroc"] for row in history], color="tab:green", lw=0.9, label="val AUROC"
    )
    ax2.set_ylabel("validation metric")
    lines, labels = [], []
    for a in (ax, ax2):
        ln, lb = a.get_legend_handles_labels()
        lines += ln
        labels += lb
    ax2.legend(lines, labels, loc="center right", fontsize=8)
    ax.set_title(title)
    _finish(fig, path)


def fig_distortion(path, curve: list[tuple[int, float]], chosen_k: int) -> None:
    ks = [k for k, _ in curve]
    ds = [d for _, d in curve]
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.plot(ks, ds, marker="o", ms=4, color="tab:purple")
    ax.axvline(chosen_k, ls="--", lw=1.0, color="gray")
    ax.annotate(f"k={chosen_k}", xy=(chosen_k, ds[ks.index(chosen_k)]), xytext=(5, 5),
                textcoords="offset points", fontsize=9)
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel("distortion")
    ax.set_title("k-means distortion curve")
    _finish(fig, path)


def fig_benchmark(path, rows: list[dict]) -> None:
    """Grouped bars of F1 / AUROC / AUPRC per model, with seed-std whiskers."""
    names = [r["model"] for r in rows]
    metrics_shown = ("f1", "auroc", "auprc")
    x = np.arange(len(names))
    width = 0.26
    fig, ax = plt.subplots(figsize=(max(6.0, 1.3 * len(names)), 4.0))
    for i, m in enumerate(metrics_shown):
        vals = [r[m] for r in rows]
        errs = [r.get(f"{m}_std", 0.0) for r in rows]
        ax.bar(x + (i - 1) * width, vals, width, yerr=errs, capsize=2, label=m.upper())
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_title("test-set benchmark")
    ax.legend(fontsize=8)
    _finish(fig, path)


def fig_ablation(path, rows: list[dict]) -> None:
    """F1 per ablation setting, full model first."""
    names = [r["setting"] for r in rows]
    vals = [r["f1"] for r in rows]
    errs = [r.get("f1_std", 0.0) for r in rows]
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(names)), 3.8))
    ax.bar(names, vals, yerr=errs, capsize=2, color="tab:cyan")
    ax.set_ylabel("test F1")
    ax.set_title("code-kind ablation")
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right", fontsize=8)
    _finish(fig, path)


def fig_attention_hist(path, summary: dict[str, dict]) -> None:
    """2x2 grid of per-group attention weight histograms."""
    fig, axes = plt.subplots(2, 2, figsize=(7.5, 6.0), sharex=True)
    for ax, group in zip(axes.ravel(), GROUPS):
        if group not in summary:
            ax.set_axis_off()
            ax.set_title(f"{group} (empty)")
            continue
        entry = summary[group]
        edges = np.array(entry["bin_edges"])
        centers = 0.5 * (edges[:-1] + edges[1:])
        ax.bar(centers, entry["histogram"], width=edges[1] - edges[0],
               color=_GROUP_COLORS.get(group, "gray"), edgecolor="black", lw=0.3)
        ax.set_title(f"{group} (n={entry['count']})", fontsize=10)
        ax.set_xlabel("attention weight")
        ax.set_ylabel("edges")
    fig.suptitle("final-layer attention weights by classification group")
    _finish(fig, path)


def fig_code_frequency(path, rows: list[dict]) -> None:
    """Heatmap: top codes (rows) vs classification groups (columns)."""
    if not rows:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.text(0.5, 0.5, "no codes", ha="center")
        _finish(fig, path)
        return
    data = np.array([[r[g] for g in GROUPS] for r in rows])
    labels = [f"{r['code']} ({r['kind'][:4]})" for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, max(4.0, 0.16 * len(rows))))
    im = ax.imshow(data, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(GROUPS)))
    ax.set_xticklabels(GROUPS)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=6)
    fig.colorbar(im, ax=ax, label="patient-normalized frequency")
    ax.set_title("code frequency by group")
    _finish(fig, path)


def fig_neighborhood(path, nb: Neighborhood) -> None:
    """Spring-free (Kamada-Kawai) drawing of an instance neighborhood."""
    g = nx.Graph()
    g.add_nodes_from(nb.nodes)
    g.add_edges_from(nb.edges)
    if g.number_of_nodes() == 1:
        pos = {nb.center: (0.0, 0.0)}
    else:
        pos = nx.kamada_kawai_layout(g)
    colors = []
    sizes = []
    for v in g.nodes():
        ann = nb.annotations.get(v, {})
        colors.append(_GROUP_COLORS.get(ann.get("group", ""), "lightgray"))
        sizes.append(420 if v == nb.center else 180)
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    nx.draw_networkx_edges(g, pos, ax=ax, width=0.7, alpha=0.6)
    nx.draw_networkx_nodes(
        g, pos, ax=ax, node_color=colors, node_size=sizes, edgecolors="black", linewidths=0.6
    )
    hop_labels = {v: str(nb.hop_distance.get(v, "")) for v in g.nodes()}
    nx.draw_networkx_labels(g, pos, labels=hop_labels, font_size=7, ax=ax)
    ax.set_title(f"{nb.hops}-hop neighborhood of node {nb.center}")
    ax.set_axis_off()
    _finish(fig, path)
