"""Cosine KNN patient similarity graph: construction, K selection by
distortion, stratified transductive splits, and graph statistics.

The graph is undirected and stored as sorted neighbor lists in compressed
row layout.  Each node out-selects its k most similar neighbors; directed
selections are merged and deduplicated, so final degrees can exceed k (a
node may be selected by many others) while the undirected edge count stays
in [n*k/2, n*k].
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ehr import Label, PatientVector

MASK_NAMES = ("train", "val", "test")
_MASK_NONE = "none"


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a, b) / (|a| |b|), clipped to [-1, 1]; zero vectors are an error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity is undefined for zero vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    stratified: bool = True

    def validate(self) -> None:
        if len(self.fractions) != 3:
            raise ValueError("SplitSpec needs exactly three fractions")
        if any(not (0.0 < f < 1.0) for f in self.fractions):
            raise ValueError("each split fraction must be in (0,1)")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(self.fractions)}, expected 1")


class SimilarityGraph:
    """Undirected patient graph with features, labels, and optional masks."""

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        patient_ids: Sequence[str],
        indptr: np.ndarray,
        indices: np.ndarray,
        sims: np.ndarray,
        k: int,
        seed: int = 0,
        masks: Optional[dict[str, np.ndarray]] = None,
    ):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.patient_ids = list(patient_ids)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.sims = np.asarray(sims, dtype=np.float64)
        self.k = int(k)
        self.seed = int(seed)
        self.masks = masks
        self._edge_cache: dict[str, tuple] = {}

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.indices.size // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def neighbor_sims(self, v: int) -> np.ndarray:
        return self.sims[self.indptr[v] : self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def mask(self, name: str) -> np.ndarray:
        if self.masks is None:
            raise ValueError("graph has no masks; run the split step first")
        return self.masks[name]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) for every directed adjacency entry, dst-major order."""
        if "plain" not in self._edge_cache:
            dst = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees())
            self._edge_cache["plain"] = (self.indices.copy(), dst)
        return self._edge_cache["plain"]

    def edge_arrays_with_self(self) -> tuple[np.ndarray, np.ndarray]:
        """As edge_arrays but with a self-loop per node, sorted by (dst, src)."""
        if "self" not in self._edge_cache:
            src, dst = self.edge_arrays()
            src = np.concatenate([src, np.arange(self.n, dtype=np.int64)])
            dst = np.concatenate([dst, np.arange(self.n, dtype=np.int64)])
            order = np.lexsort((src, dst))
            self._edge_cache["self"] = (src[order], dst[order])
        return self._edge_cache["self"]

    def undirected_edges(self) -> np.ndarray:
        """(m, 2) array of undirected edges with u < v, plus no duplicates."""
        src, dst = self.edge_arrays()
        keep = src < dst
        return np.column_stack([src[keep], dst[keep]])


def _normalized(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot build a cosine KNN graph over zero vectors")
    return features / norms


def build_knn_graph(
    vectors: Sequence[PatientVector],
    k: int,
    seed: int = 0,
    block_size: int = 512,
) -> SimilarityGraph:
    """Link every patient to its k most similar neighbors by cosine similarity.

    Ties are broken toward the lower node index.  Similarities are evaluated
    in row blocks so memory stays O(n * block_size).
    """
    n = len(vectors)
    if k <= 0:
        raise ValueError("k must be positive")
    if k >= n:
        raise ValueError(f"k={k} requires at least k+1={k + 1} vectors, got {n}")
    features = np.stack([pv.features for pv in vectors]).astype(np.float64)
    labels = np.array(
        [1 if pv.label is Label.POSITIVE else 0 for pv in vectors], dtype=np.int64
    )
    ids = [pv.patient_id for pv in vectors]

    normalized = _normalized(features)
    pair_keys = set()
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        sims_block = normalized[start:stop] @ normalized.T
        rows = np.arange(start, stop)
        sims_block[np.arange(stop - start), rows] = -np.inf  # never select self
        # Stable sort on descending similarity resolves ties to lower index.
        order = np.argsort(-sims_block, axis=1, kind="stable")[:, :k]
        for i, row in zip(rows, order):
            for j in row:
                pair_keys.add((min(i, int(j)), max(i, int(j))))

    edges = np.array(sorted(pair_keys), dtype=np.int64)
    return _assemble(features, labels, ids, edges, normalized, k, seed)


def _assemble(features, labels, ids, edges, normalized, k, seed) -> SimilarityGraph:
    n = features.shape[0]
    u, v = edges[:, 0], edges[:, 1]
    edge_sims = np.clip(np.einsum("ij,ij->i", normalized[u], normalized[v]), -1.0, 1.0)
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    sim2 = np.concatenate([edge_sims, edge_sims])
    order = np.lexsort((dst, src))
    src, dst, sim2 = src[order], dst[order], sim2[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return SimilarityGraph(
        features=features,
        labels=labels,
        patient_ids=ids,
        indptr=indptr,
        indices=dst,
        sims=sim2,
        k=k,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# K selection by distortion (k-means elbow)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - np.array(centroids)[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total == 0.0:
            centroids.append(points[int(rng.integers(n))])
            continue
        probs = d2 / total
        centroids.append(points[int(rng.choice(n, p=probs))])
    return np.array(centroids)


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = 50):
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new_centroids = centroids.copy()
        for c in range(centroids.shape[0]):
            members = points[assign == c]
            if members.shape[0] > 0:
                new_centroids[c] = members.mean(axis=0)
        if np.allclose(new_centroids, centroids, atol=1e-12, rtol=0.0):
            centroids = new_centroids
            break
        centroids = new_centroids
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    distortion = float(d2[np.arange(points.shape[0]), assign].sum())
    return centroids, distortion


def select_k_by_distortion(
    features: np.ndarray,
    k_range: Sequence[int] = range(2, 11),
    seed: int = 0,
    max_iter: int = 50,
) -> tuple[int, list[tuple[int, float]]]:
    """Choose k at the elbow of the k-means distortion curve.

    Features are cosine-normalized first.  Centroid sets are grown
    incrementally (the converged k-1 centroids plus the point currently
    furthest from its nearest centroid), which keeps the curve monotone
    non-increasing.  The elbow is the interior k with the largest second
    difference of the curve.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if any(k < 1 for k in ks):
        raise ValueError("k values must be >= 1")
    points = _normalized(np.asarray(features, dtype=np.float64))
    n = points.shape[0]
    if max(ks) > n:
        raise ValueError(f"k_range max {max(ks)} exceeds number of points {n}")
    rng = np.random.default_rng(seed)

    if np.allclose(points, points[0], atol=1e-12, rtol=0.0):
        warnings.warn("degenerate data (all points identical); returning minimum k")
        return ks[0], [(k, 0.0) for k in ks]

    curve: list[tuple[int, float]] = []
    centroids = _kmeans_pp_init(points, ks[0], rng)
    centroids, distortion = _lloyd(points, centroids, max_iter)
    curve.append((ks[0], distortion))
    prev_k = ks[0]
    for k in ks[1:]:
        while prev_k < k:
            d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).min(axis=1)
            centroids = np.vstack([centroids, points[int(d2.argmax())]])
            prev_k += 1
        centroids, distortion = _lloyd(points, centroids, max_iter)
        curve.append((k, distortion))

    if len(curve) < 3:
        warnings.warn("k_range too short for an elbow; returning minimum k")
        return ks[0], curve
    values = np.array([d for _, d in curve])
    if values[0] - values[-1] < 1e-12:
        warnings.warn("flat distortion curve; returning minimum k")
        return ks[0], curve
    second_diff = values[:-2] - 2.0 * values[1:-1] + values[2:]
    chosen = curve[1 + int(second_diff.argmax())][0]
    return chosen, curve


# ---------------------------------------------------------------------------
# stratified transductive split


def _largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    """Integer allocation of `total` by fractions, exact by largest remainder."""
    raw = np.array([total * f for f in fractions])
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    # Ties go to the earlier split (train, then val, then test).
    order = np.lexsort((np.arange(len(fractions)), -(raw - counts)))
    for i in range(short):
        counts[order[i]] += 1
    return counts


def split_nodes(graph: SimilarityGraph, spec: SplitSpec) -> SimilarityGraph:
    """Assign disjoint, exhaustive train/val/test masks to the graph in place.

    Stratified mode shuffles each class independently and allocates per-class
    counts by largest remainder, keeping every mask's positive count within
    one node of the globally proportional value.
    """
    spec.validate()
    n = graph.n
    rng = np.random.default_rng(spec.seed)
    sizes = _largest_remainder(n, spec.fractions)
    assignment = np.full(n, -1, dtype=np.int64)

    if spec.stratified:
        classes = np.unique(graph.labels)
        for c in classes:
            members = np.flatnonzero(graph.labels == c)
            if members.size == 0:
                raise ValueError(f"class {c} has no nodes; cannot stratify")
            rng.shuffle(members)
            counts = _largest_remainder(members.size, spec.fractions)
            start = 0
            for m, count in enumerate(counts):
                assignment[members[start : start + count]] = m
                start += count
        # Per-class rounding can leave overall sizes off by a node or two;
        # rebalance by moving nodes of the majority class between masks.
        _rebalance(assignment, sizes, graph.labels, rng)
    else:
        perm = rng.permutation(n)
        start = 0
        for m, count in enumerate(sizes):
            assignment[perm[start : start + count]] = m
            start += count

    masks = {name: assignment == m for m, name in enumerate(MASK_NAMES)}
    graph.masks = masks
    return graph


def _rebalance(assignment, sizes, labels, rng) -> None:
    majority = np.bincount(labels).argmax()
    current = np.bincount(assignment, minlength=3)
    over = [m for m in range(3) if current[m] > sizes[m]]
    under = [m for m in range(3) if current[m] < sizes[m]]
    for m_over in over:
        while current[m_over] > sizes[m_over]:
            m_under = next(m for m in under if current[m] < sizes[m])
            movable = np.flatnonzero((assignment == m_over) & (labels == majority))
            if movable.size == 0:  # tiny graphs: fall back to any node
                movable = np.flatnonzero(assignment == m_over)
            pick = movable[int(rng.integers(movable.size))]
            assignment[pick] = m_under
            current[m_over] -= 1
            current[m_under] += 1


# ---------------------------------------------------------------------------
# descriptive statistics


def degree_stats(
    graph: SimilarityGraph, group_assignment: dict[int, str]
) -> tuple[dict[str, dict[str, float]], list[str]]:
    """Per-group degree and neighbor-similarity descriptives.

    Returns (stats, notes); groups with no members are omitted and noted.
    """
    degrees = graph.degrees()
    groups: dict[str, list[int]] = {}
    for node, group in group_assignment.items():
        groups.setdefault(group, []).append(node)
    stats: dict[str, dict[str, float]] = {}
    notes: list[str] = []
    for group in ("TP", "TN", "FP", "FN"):
        members = sorted(groups.get(group, []))
        if not members:
            notes.append(f"group {group} is empty; omitted")
            continue
        degs = degrees[members]
        mean_sims = []
        for v in members:
            s = graph.neighbor_sims(v)
            if s.size:
                mean_sims.append(float(s.mean()))
        stats[group] = {
            "count": float(len(members)),
            "mean_degree": float(degs.mean()),
            "median_degree": float(np.median(degs)),
            "max_degree": float(degs.max()),
            "mean_neighbor_similarity": float(np.mean(mean_sims)) if mean_sims else float("nan"),
        }
    return stats, notes


# ---------------------------------------------------------------------------
# serialization


def save_graph(path, graph: SimilarityGraph) -> None:
    """Write the lossless text format: header, node block, then edge list."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{graph.n} {graph.dim} {graph.k} {graph.seed}\n")
        for i in range(graph.n):
            mask = _MASK_NONE
            if graph.masks is not None:
                for name in MASK_NAMES:
                    if graph.masks[name][i]:
                        mask = name
                        break
            floats = " ".join(repr(float(x)) for x in graph.features[i])
            fh.write(f"{graph.patient_ids[i]} {graph.labels[i]} {mask} {floats}\n")
        src, dst = graph.edge_arrays()
        for a, b, s in zip(src, dst, graph.sims):
            if a < b:
                fh.write(f"{a} {b} {repr(float(s))}\n")


def load_graph(path) -> SimilarityGraph:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        n, dim, k, seed = int(header[0]), int(header[1]), int(header[2]), int(header[3])
        ids, labels, mask_names, feats = [], [], [], []
        for _ in range(n):
            parts = fh.readline().split()
            ids.append(parts[0])
            labels.append(int(parts[1]))
            mask_names.append(parts[2])
            feats.append([float(t) for t in parts[3 : 3 + dim]])
        edges, sims = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            edges.append((int(parts[0]), int(parts[1])))
            sims.append(float(parts[2]))

    features = np.array(feats, dtype=np.float64)
    labels_arr = np.array(labels, dtype=np.int64)
    edges_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
    u, v = edges_arr[:, 0], edges_arr[:, 1]
    sims_arr = np.array(sims, dtype=np.float64)
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    sim2 = np.concatenate([sims_arr, sims_arr])
    order = np.lexsort((dst, src))
    src, dst, sim2 = src[order], dst[order], sim2[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)

    masks = None
    if any(m != _MASK_NONE for m in mask_names):
        masks = {name: np.array([m == name for m in mask_names]) for name in MASK_NAMES}
    return SimilarityGraph(
        features=features,
        labels=labels_arr,
        patient_ids=ids,
        indptr=indptr,
        indices=dst,
        sims=sim2,
        k=k,
        seed=seed,
        masks=masks,
    )


def write_dot(
    path,
    nodes: Sequence[int],
    edges: Sequence[tuple[int, int]],
    node_attrs: Optional[dict[int, dict[str, str]]] = None,
    name: str = "subgraph_view",
) -> None:
    """Emit an undirected DOT file for a node/edge subset."""
    node_attrs = node_attrs or {}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"graph {name} {{\n")
        for v in nodes:
            attrs = node_attrs.get(v, {})
            attr_text = ", ".join(f'{key}="{val}"' for key, val in sorted(attrs.items()))
            fh.write(f"  n{v} [{attr_text}];\n" if attr_text else f"  n{v};\n")
        for a, b in edges:
            fh.write(f"  n{a} -- n{b};\n")
        fh.write("}\n")
