"""Interpretability over a trained model: TP/TN/FP/FN group assignment,
attention-weight summaries, per-group clinical code frequencies, and
per-instance neighborhood dossiers.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ehr import PatientRecord
from .gnn import AttentionDump
from .graph import SimilarityGraph, write_dot

GROUPS = ("TP", "TN", "FP", "FN")
HIST_BINS = 20


def group_assignment(
    probabilities: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    threshold: float = 0.5,
) -> dict[int, str]:
    """Map each masked node to its classification group at the threshold."""
    out: dict[int, str] = {}
    for v in np.flatnonzero(np.asarray(mask, dtype=bool)):
        pred = probabilities[v] >= threshold
        pos = labels[v] == 1
        if pred and pos:
            out[int(v)] = "TP"
        elif pred and not pos:
            out[int(v)] = "FP"
        elif not pred and pos:
            out[int(v)] = "FN"
        else:
            out[int(v)] = "TN"
    return out


def group_counts(groups: dict[int, str]) -> dict[str, int]:
    counts = {g: 0 for g in GROUPS}
    for g in groups.values():
        counts[g] += 1
    return counts


# ---------------------------------------------------------------------------
# axis 1: attention weights


def attention_summary(
    dump: AttentionDump, groups: dict[int, str], labels: np.ndarray
) -> tuple[dict[str, dict], list[str]]:
    """Per-group attention histograms and label-split neighbor means.

    Heads are averaged per edge first.  Histograms cover every entry whose
    target belongs to the group (self-loops included); the positive/negative
    neighbor means exclude self-loops.  Groups without any entries are
    omitted and noted.
    """
    averaged = dump.mean_over_heads()
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    target_group = np.array(
        [groups.get(int(t), "") for t in averaged.target], dtype=object
    )
    summary: dict[str, dict] = {}
    notes: list[str] = []
    for group in GROUPS:
        sel = target_group == group
        if not np.any(sel):
            notes.append(f"group {group} has no attention entries; omitted")
            continue
        weights = averaged.weight[sel]
        hist, _ = np.histogram(np.clip(weights, 0.0, 1.0), bins=edges)
        non_self = sel & (averaged.source != averaged.target)
        to_pos = averaged.weight[non_self & (labels[averaged.source] == 1)]
        to_neg = averaged.weight[non_self & (labels[averaged.source] == 0)]
        summary[group] = {
            "count": int(weights.size),
            "histogram": hist.tolist(),
            "bin_edges": edges.tolist(),
            "mean_weight": float(weights.mean()),
            "mean_to_positive": float(to_pos.mean()) if to_pos.size else float("nan"),
            "mean_to_negative": float(to_neg.mean()) if to_neg.size else float("nan"),
        }
    return summary, notes


def save_attention_summary(path, summary: dict, notes: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"groups": summary, "notes": notes}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# axis 2: code frequencies


def code_frequency(
    records: Sequence[Optional[PatientRecord]],
    groups: dict[int, str],
    top_n: int = 50,
) -> tuple[list[dict], list[str]]:
    """Per-group patient-normalized code frequencies, top_n by max frequency.

    `records` is indexed by node id.  A code counts once per patient whose
    retained visits contain it; each group column is normalized by that
    group's patient count.  Rows come back grouped by code kind.
    """
    members: dict[str, list[int]] = {g: [] for g in GROUPS}
    for node, group in groups.items():
        members[group].append(node)
    notes = [f"group {g} is empty; zero column" for g in GROUPS if not members[g]]

    counts: dict[tuple[str, str], dict[str, int]] = {}
    for group, nodes in members.items():
        for v in nodes:
            record = records[v]
            if record is None:
                raise ValueError(f"node {v} is in the test mask but has no record")
            seen = {(c.value, c.kind.value) for c in record.all_codes()}
            for key in seen:
                counts.setdefault(key, {g: 0 for g in GROUPS})[group] += 1

    rows = []
    for (value, kind), per_group in counts.items():
        freqs = {
            g: (per_group[g] / len(members[g])) if members[g] else 0.0 for g in GROUPS
        }
        rows.append(
            {"code": value, "kind": kind, **freqs, "_max": max(freqs.values())}
        )
    rows.sort(key=lambda r: (-r["_max"], r["kind"], r["code"]))
    rows = rows[:top_n]
    rows.sort(key=lambda r: (r["kind"], -r["_max"], r["code"]))
    for r in rows:
        del r["_max"]
    return rows, notes


def save_code_frequency(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("code,kind," + ",".join(GROUPS) + "\n")
        for r in rows:
            freqs = ",".join(repr(float(r[g])) for g in GROUPS)
            fh.write(f"{r['code']},{r['kind']},{freqs}\n")


# ---------------------------------------------------------------------------
# axis 3: neighborhood extraction


@dataclass
class Neighborhood:
    center: int
    hops: int
    nodes: list[int]  # sorted, includes center
    edges: list[tuple[int, int]]  # induced, u < v
    hop_distance: dict[int, int]
    annotations: dict[int, dict] = field(default_factory=dict)
    attention: list[dict] = field(default_factory=list)  # entries incident to center


def extract_neighborhood(
    graph: SimilarityGraph,
    center: int,
    hops: int,
    probabilities: Optional[np.ndarray] = None,
    groups: Optional[dict[int, str]] = None,
    dump: Optional[AttentionDump] = None,
) -> Neighborhood:
    """Breadth-first induced subgraph around `center`, with annotations."""
    if not (0 <= center < graph.n):
        raise ValueError(f"node id {center} out of range [0, {graph.n})")
    if hops not in (1, 2):
        raise ValueError("hops must be 1 or 2")
    dist = {int(center): 0}
    queue = deque([int(center)])
    while queue:
        v = queue.popleft()
        if dist[v] == hops:
            continue
        for u in graph.neighbors(v):
            u = int(u)
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    nodes = sorted(dist)
    node_set = set(nodes)
    edges = [
        (v, int(u))
        for v in nodes
        for u in graph.neighbors(v)
        if v < u and int(u) in node_set
    ]

    annotations = {}
    for v in nodes:
        ann = {"label": int(graph.labels[v]), "patient_id": graph.patient_ids[v]}
        if groups is not None:
            ann["group"] = groups.get(v, "")
        if probabilities is not None:
            ann["probability"] = float(probabilities[v])
        annotations[v] = ann

    attention = []
    if dump is not None:
        incident = (dump.source == center) | (dump.target == center)
        for s, t, h, w in zip(
            dump.source[incident],
            dump.target[incident],
            dump.head[incident],
            dump.weight[incident],
        ):
            attention.append(
                {"source": int(s), "target": int(t), "head": int(h), "weight": float(w)}
            )
    return Neighborhood(
        center=int(center),
        hops=hops,
        nodes=nodes,
        edges=sorted(edges),
        hop_distance=dist,
        annotations=annotations,
        attention=attention,
    )


_GROUP_COLORS = {"TP": "palegreen", "TN": "lightblue", "FP": "orange", "FN": "salmon"}


def neighborhood_to_dot(path, nb: Neighborhood) -> None:
    """DOT rendering with group-coded fill colors; the center is outlined."""
    attrs = {}
    for v in nb.nodes:
        ann = nb.annotations.get(v, {})
        group = ann.get("group", "") or "?"
        label = f"{ann.get('patient_id', v)}\\n{group}"
        if "probability" in ann:
            label += f" p={ann['probability']:.2f}"
        attrs[v] = {
            "label": label,
            "style": "filled",
            "fillcolor": _GROUP_COLORS.get(group, "white"),
        }
        if v == nb.center:
            attrs[v]["penwidth"] = "3"
    write_dot(path, nb.nodes, nb.edges, attrs, name=f"hop{nb.hops}_of_{nb.center}")


# ---------------------------------------------------------------------------
# instance dossiers


def _top_codes(record: PatientRecord, top_n: int = 5) -> list[dict]:
    """Rank a patient's codes by the number of visits mentioning them."""
    tallies: dict[tuple[str, str], int] = {}
    for visit in record.visits:
        for code in visit.codes:
            key = (code.value, code.kind.value)
            tallies[key] = tallies.get(key, 0) + 1
    ranked = sorted(tallies.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        {"code": value, "kind": kind, "count": count}
        for (value, kind), count in ranked[:top_n]
    ]


def instance_report(
    graph: SimilarityGraph,
    records: Sequence[Optional[PatientRecord]],
    center: int,
    probabilities: np.ndarray,
    groups: dict[int, str],
    dump: Optional[AttentionDump] = None,
    threshold: float = 0.5,
    hops: int = 2,
) -> dict:
    """Machine-readable dossier for one test-mask instance."""
    if center not in groups:
        raise ValueError(f"node {center} is not in the grouped (test) mask")
    nb = extract_neighborhood(
        graph, center, hops, probabilities=probabilities, groups=groups, dump=dump
    )
    record = records[center]
    if record is None:
        raise ValueError(f"node {center} has no patient record")
    neighbor_entries = []
    for v in nb.nodes:
        if v == center:
            continue
        entry = dict(nb.annotations[v])
        entry["node"] = v
        entry["hop"] = nb.hop_distance[v]
        rec = records[v]
        entry["top_codes"] = _top_codes(rec) if rec is not None else []
        neighbor_entries.append(entry)
    return {
        "node": int(center),
        "patient_id": graph.patient_ids[center],
        "label": int(graph.labels[center]),
        "group": groups[center],
        "probability": float(probabilities[center]),
        "threshold": float(threshold),
        "top_codes": _top_codes(record),
        "neighborhood": {
            "hops": hops,
            "nodes": neighbor_entries,
            "edges": [list(e) for e in nb.edges],
        },
        "attention_incident": nb.attention,
    }


def select_instances(
    groups: dict[int, str], seed: int = 0
) -> tuple[dict[str, int], list[str]]:
    """One seeded representative node per non-empty classification group."""
    rng = np.random.default_rng(seed)
    members: dict[str, list[int]] = {g: [] for g in GROUPS}
    for node, group in groups.items():
        members[group].append(node)
    chosen: dict[str, int] = {}
    notes: list[str] = []
    for group in GROUPS:
        nodes = sorted(members[group])
        if not nodes:
            notes.append(f"group {group} is empty; no instance selected")
            continue
        chosen[group] = nodes[int(rng.integers(len(nodes)))]
    return chosen, notes
