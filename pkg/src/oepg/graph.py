"""Graphs, ego-subgraphs, dataset ingestion, SBM generation and label splits."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics import RandomStream


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None) -> None:
        super().__init__(message)
        self.lineno = lineno


class SchemaError(ValueError):
    pass


class SplitError(ValueError):
    pass


def _canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise ValueError(f"edge {bad.tolist()} out of range for {n} nodes")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if len(e):
        e = np.unique(e, axis=0)
    return e


@dataclass(eq=False)
class Graph:
    """Undirected graph with dense node features.

    Edges are stored once per undirected pair as ``(u, v)`` with ``u < v``;
    self-loops and duplicates are dropped on construction.
    """

    node_features: np.ndarray
    edges: np.ndarray
    label: int | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.node_features = np.atleast_2d(np.asarray(self.node_features, dtype=np.float64))
        self.edges = _canonical_edges(self.edges, self.num_nodes)
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
            if len(self.node_labels) != self.num_nodes:
                raise ValueError("node_labels length differs from node count")

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        n = self.num_nodes
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def neighbors(self, node: int) -> np.ndarray:
        m = self.csr
        return m.indices[m.indptr[node] : m.indptr[node + 1]]


@dataclass(eq=False)
class EgoSubgraph:
    """Induced k-hop neighbourhood with the center node at local index 0."""

    node_ids: np.ndarray
    features: np.ndarray
    edges: np.ndarray  # local indices, u < v
    hops: int
    target: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    @classmethod
    def whole_graph(cls, graph: Graph) -> "EgoSubgraph":
        return cls(np.arange(graph.num_nodes), graph.node_features, graph.edges.copy(), hops=-1)


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    label_ratio: float = 1.0
    imbalance_ratio: float = 1.0
    meta: dict = field(default_factory=dict)


# ------------------------------------------------------------------ ingestion
def load_dataset(path, fmt: str | None = None) -> list[Graph]:
    """Read graphs from JSONL (one graph per line) or a single-graph edge list.

    The format is inferred from the extension when ``fmt`` is None:
    ``.jsonl``/``.json`` -> jsonl, anything else -> edge-list.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in {".jsonl", ".json"} else "edge-list"
    if fmt == "jsonl":
        graphs = _load_jsonl(path)
    elif fmt == "edge-list":
        graphs = _load_edge_list(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    dims = {g.feature_dim for g in graphs}
    if len(dims) > 1:
        raise SchemaError(f"inconsistent node feature dimensions across dataset: {sorted(dims)}")
    return graphs


def _load_jsonl(path: Path) -> list[Graph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                nodes = np.asarray(rec["nodes"], dtype=np.float64)
                if nodes.ndim != 2:
                    raise ValueError("'nodes' must be a list of equal-length feature lists")
                graphs.append(
                    Graph(
                        nodes,
                        rec.get("edges", []),
                        label=rec.get("label"),
                        node_labels=rec.get("node_labels"),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed graph record: {exc}", lineno) from exc
    return graphs


def _load_edge_list(path: Path) -> list[Graph]:
    lines = [ln for ln in Path(path).read_text().splitlines()]
    body = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip()]
    if not body:
        return []
    lineno, head = body[0]
    try:
        n, d_in = int(head[0]), int(head[1])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}:{lineno}: header must be 'N d_in'", lineno) from exc
    if len(body) < 1 + n:
        raise ParseError(f"{path}: expected {n} feature lines after the header")
    feats = np.zeros((n, d_in))
    for row, (lineno, parts) in enumerate(body[1 : 1 + n]):
        if len(parts) != d_in:
            raise ParseError(f"{path}:{lineno}: expected {d_in} features, got {len(parts)}", lineno)
        try:
            feats[row] = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}", lineno) from exc
    edges = []
    for lineno, parts in body[1 + n :]:
        try:
            u, v = int(parts[0]), int(parts[1])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}:{lineno}: edge line must be 'u v'", lineno) from exc
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"{path}:{lineno}: edge ({u}, {v}) out of range for {n} nodes", lineno)
        edges.append((u, v))
    return [Graph(feats, edges)]


def save_jsonl(graphs: list[Graph], path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            rec = {"nodes": g.node_features.tolist(), "edges": g.edges.tolist()}
            if g.label is not None:
                rec["label"] = int(g.label)
            if g.node_labels is not None:
                rec["node_labels"] = g.node_labels.tolist()
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------- subgraphs
def bfs_distances(graph: Graph, sources, limit: int | None = None) -> np.ndarray:
    """Hop distance from the nearest source; -1 where unreachable (or beyond ``limit``)."""
    dist = np.full(graph.num_nodes, -1, dtype=np.int64)
    queue = deque()
    for s in np.atleast_1d(sources):
        dist[s] = 0
        queue.append(int(s))
    indptr, indices = graph.csr.indptr, graph.csr.indices
    while queue:
        u = queue.popleft()
        if limit is not None and dist[u] >= limit:
            continue
        for v in indices[indptr[u] : indptr[u + 1]]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(int(v))
    return dist


def k_hop_subgraph(graph: Graph, node: int, k: int) -> EgoSubgraph:
    if not 0 <= node < graph.num_nodes:
        raise IndexError(f"node {node} out of range for {graph.num_nodes} nodes")
    if k < 0:
        raise ValueError("k must be non-negative")
    dist = bfs_distances(graph, [node], limit=k)
    others = np.flatnonzero(dist > 0)
    node_ids = np.concatenate([[node], others]).astype(np.int64)
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    local[node_ids] = np.arange(len(node_ids))
    e = graph.edges
    keep = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0) if len(e) else np.zeros(0, bool)
    sub_edges = np.sort(local[e[keep]], axis=1) if keep.any() else np.zeros((0, 2), np.int64)
    return EgoSubgraph(node_ids, graph.node_features[node_ids], sub_edges, hops=k)


# -------------------------------------------------------------- generators
def generate_sbm(
    classes: int,
    nodes_per_class: int,
    p_in: float,
    p_out: float,
    feature_noise: float,
    seed: int,
) -> Graph:
    """Planted-partition SBM with one-hot class features plus Gaussian noise."""
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError("require 0 <= p_out <= p_in <= 1")
    rng = RandomStream(seed)
    n = classes * nodes_per_class
    labels = np.repeat(np.arange(classes), nodes_per_class)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    feats = np.eye(classes)[labels] + rng.normal(0.0, feature_noise, size=(n, classes))
    return Graph(feats, edges, node_labels=labels)


# ------------------------------------------------------------------- splits
def make_imbalanced_split(
    node_labels,
    imbalance_ratio: float,
    label_ratio: float,
    seed: int,
    edges=None,
) -> DatasetSplit:
    """Quantity- and topology-imbalanced semi-supervised split.

    The largest class (lowest label on ties) is the majority and receives
    ``round(label_ratio * size)`` labeled nodes; every other class receives
    ``max(1, round(imbalance_ratio * majority_count))``. When ``edges`` is
    given, minority labels are drawn with weight ``1 / (1 + d)`` where ``d`` is
    the hop distance to the nearest node with an inter-class edge. Validation
    and test sets are balanced across classes.
    """
    labels = np.asarray(node_labels, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise SplitError("need at least 2 classes")
    if not (0 < imbalance_ratio <= 1 and 0 < label_ratio <= 1):
        raise SplitError("ratios must lie in (0, 1]")
    rng = RandomStream(seed)
    major = classes[np.argmax(counts)]
    n_major = max(1, int(round(label_ratio * counts.max())))
    n_minor = max(1, int(round(imbalance_ratio * n_major)))

    weights = np.ones(len(labels))
    if edges is not None:
        g = Graph(np.zeros((len(labels), 1)), edges)
        e = g.edges
        cross = e[labels[e[:, 0]] != labels[e[:, 1]]] if len(e) else e
        boundary = np.unique(cross.ravel())
        if len(boundary):
            dist = bfs_distances(g, boundary).astype(float)
            dist[dist < 0] = len(labels)
            weights = 1.0 / (1.0 + dist)

    train, val, test = [], [], []
    remaining = {}
    for c in classes:
        members = np.flatnonzero(labels == c)
        want = n_major if c == major else n_minor
        want = min(want, len(members) - 1) if len(members) > 1 else 0
        if want <= 0:
            raise SplitError(f"class {c} has no eligible nodes to label")
        if c == major or edges is None:
            picked = rng.choice(members, size=want, replace=False)
        else:
            p = weights[members] / weights[members].sum()
            picked = rng.choice(members, size=want, replace=False, p=p)
        train.append(np.sort(picked))
        remaining[c] = rng.permutation(np.setdiff1d(members, picked))
    n_eval = min(len(r) for r in remaining.values())
    n_val = n_eval // 2
    for c in classes:
        val.append(remaining[c][:n_val])
        test.append(remaining[c][n_val:n_eval])
    return DatasetSplit(
        np.concatenate(train),
        np.sort(np.concatenate(val)),
        np.sort(np.concatenate(test)),
        label_ratio=label_ratio,
        imbalance_ratio=imbalance_ratio,
        meta={"majority_class": int(major), "majority_labeled": n_major, "minority_labeled": n_minor},
    )


def stratified_split(node_labels, label_ratio: float, seed: int) -> DatasetSplit:
    """Balanced split: every class labels ``round(label_ratio * size)`` nodes."""
    return make_imbalanced_split(node_labels, 1.0, label_ratio, seed)
