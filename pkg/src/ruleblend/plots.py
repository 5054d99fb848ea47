"""Figure artifacts: the selected-node diagram and evaluation charts.

The node diagram places every positive-weight node at (node mean, node size)
with its marker area proportional to the weight, draws an edge from a node to
the tightest strictly containing node, and can highlight the nodes a given
observation falls into. The JSON form is always available; rendering uses
matplotlib.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import Dataset  # noqa: E402
from .errors import DataError  # noqa: E402
from .estimator import FORMAT_VERSION, HarvestModel  # noqa: E402
from .nodegen import membership_matrix  # noqa: E402


def _direct_subset_edges(member_cols: np.ndarray, ids: list[int]) -> list[list[int]]:
    """Edges (child, parent) for direct strict-subset containment.

    ``member_cols`` holds one boolean membership column per plotted node. An
    edge is kept only when no third plotted node sits strictly between the
    pair, so the edge set is the cover relation of a strict partial order:
    irreflexive and acyclic by construction.
    """
    k = member_cols.shape[1]
    sizes = member_cols.sum(axis=0)
    subset = np.zeros((k, k), dtype=bool)
    for a in range(k):
        for b in range(k):
            if a == b or sizes[a] >= sizes[b]:
                continue
            if not np.any(member_cols[:, a] & ~member_cols[:, b]):
                subset[a, b] = True
    edges = []
    for a in range(k):
        for b in range(k):
            if not subset[a, b]:
                continue
            direct = not any(subset[a, c] and subset[c, b] for c in range(k))
            if direct:
                edges.append([ids[a], ids[b]])
    return edges


def build_node_plot(model: HarvestModel, train: Dataset | None = None,
                    obs: dict | None = None) -> dict:
    """Assemble the node-diagram payload for a fitted model.

    ``train`` (the training table) enables containment edges; ``obs`` (a
    name -> value mapping) highlights the nodes containing that observation
    and records its prediction.
    """
    selected = model.selected_nodes()
    entries = []
    for g, rule, w in selected:
        entries.append({
            "id": g,
            "x": model.display_mean(rule),
            "y": rule.size,
            "area": w,
            "label": model.rule_text(rule),
        })

    edges: list[list[int]] = []
    if train is not None:
        from .data import impute_rough

        work = impute_rough(train)
        ids = [g for g, _, _ in selected]
        rules = [rule for _, rule, _ in selected]
        # imputed cells count as observed, matching how the model was fitted
        cols = membership_matrix(rules, work.values,
                                 np.zeros_like(work.missing))
        if not np.array_equal(cols.sum(axis=0), np.array([r.size for r in rules])):
            raise DataError("training table does not reproduce the model's node sizes")
        edges = _direct_subset_edges(cols, ids)

    highlights: list[int] = []
    prediction = None
    if obs is not None:
        values, missing = model._row_arrays(obs)
        member = membership_matrix([rule for _, rule, _ in selected],
                                   values, missing)[0]
        highlights = [g for (g, _, _), inside in zip(selected, member) if inside]
        prediction = model.predict(obs)

    return {
        "format_version": FORMAT_VERSION,
        "nodes": entries,
        "edges": edges,
        "highlights": highlights,
        "prediction": prediction,
    }


def save_node_plot_json(plot: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plot, fh, indent=2)
        fh.write("\n")


def render_node_plot(plot: dict, path: str) -> None:
    """Draw the node diagram with matplotlib and save it (format by extension)."""
    entries = plot["nodes"]
    if not entries:
        raise DataError("nothing to draw: the plot has no nodes")
    xs = np.array([e["x"] for e in entries])
    ys = np.array([e["y"] for e in entries])
    areas = np.array([e["area"] for e in entries])
    ids = [e["id"] for e in entries]
    pos = {e["id"]: (e["x"], e["y"]) for e in entries}
    highlighted = set(plot.get("highlights", ()))

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for child, parent in plot.get("edges", ()):
        (x0, y0), (x1, y1) = pos[child], pos[parent]
        ax.plot([x0, x1], [y0, y1], color="0.75", linewidth=0.7, zorder=1)

    scale = 2500.0 / max(areas.max(), 1e-12)
    is_hi = np.array([i in highlighted for i in ids])
    ax.scatter(xs[~is_hi], ys[~is_hi], s=areas[~is_hi] * scale,
               facecolor="#3b6ea5", edgecolor="#1d3a57", alpha=0.75, zorder=2)
    if is_hi.any():
        ax.scatter(xs[is_hi], ys[is_hi], s=areas[is_hi] * scale,
                   facecolor="#f2b134", edgecolor="#9c6f0e", alpha=0.9, zorder=3)
        for e in entries:
            if e["id"] in highlighted:
                ax.annotate(e["label"], (e["x"], e["y"]),
                            textcoords="offset points", xytext=(6, 6), fontsize=7)
    ax.set_xlabel("node mean")
    ax.set_ylabel("node size")
    title = "selected nodes"
    if plot.get("prediction") is not None:
        title += f" (prediction {plot['prediction']:.4g})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_split_metrics(metrics: list[float], metric_name: str, path: str) -> None:
    """Bar chart of the per-split evaluation metric."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    idx = np.arange(1, len(metrics) + 1)
    ax.bar(idx, metrics, color="#3b6ea5")
    ax.axhline(float(np.mean(metrics)), color="#9c2f2f", linewidth=1.0,
               label=f"mean {np.mean(metrics):.3f}")
    ax.set_xlabel("split")
    ax.set_ylabel(metric_name)
    ax.set_xticks(idx)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
