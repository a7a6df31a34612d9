"""Graph representation, TU flat-file ingestion, perturbation and fold splitting.

Graphs are immutable, undirected, simple (no self-loops, no duplicate
edges) and stored in compressed (CSR-style) adjacency form with neighbor
lists sorted ascending. That canonical form makes every downstream
iteration order deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features and a class label."""

    num_nodes: int
    indptr: np.ndarray    # int64, length num_nodes + 1
    indices: np.ndarray   # int64, sorted neighbor lists, both directions
    features: np.ndarray  # float64, num_nodes x feature_dim
    label: int

    @property
    def num_edges(self) -> int:
        return self.indices.size // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_array(self) -> np.ndarray:
        """All edges as an E x 2 int array with u < v, lexicographically sorted."""
        u = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        v = self.indices
        keep = u < v
        return np.column_stack((u[keep], v[keep]))


def make_graph(num_nodes: int, edges, features: np.ndarray, label: int) -> Graph:
    """Canonical Graph constructor: symmetrizes, dedupes, drops self-loops,
    sorts neighbor lists ascending."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != num_nodes:
        raise DataError(f"feature matrix shape {features.shape} does not match {num_nodes} nodes")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= num_nodes:
            raise DataError(f"edge endpoint out of range [0, {num_nodes})")
        u = np.minimum(edges[:, 0], edges[:, 1])
        v = np.maximum(edges[:, 0], edges[:, 1])
        keep = u != v
        u, v = u[keep], v[keep]
        und = np.unique(np.column_stack((u, v)), axis=0) if u.size else np.empty((0, 2), np.int64)
        src = np.concatenate((und[:, 0], und[:, 1]))
        dst = np.concatenate((und[:, 1], und[:, 0]))
    else:
        src = dst = np.empty(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return Graph(num_nodes, indptr, dst, features, int(label))


def with_features(g: Graph, features: np.ndarray) -> Graph:
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.shape[0] != g.num_nodes:
        raise DataError(f"feature matrix shape {features.shape} does not match {g.num_nodes} nodes")
    return Graph(g.num_nodes, g.indptr, g.indices, features, g.label)


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """A graph-classification dataset: graphs share a feature space and
    labels are contiguous in [0, num_classes)."""

    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    name: str
    node_labels_raw: Optional[list[np.ndarray]] = field(default=None, repr=False)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)


# --- feature encoding ----------------------------------------------------


def one_hot(values: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((values.size, dim), dtype=np.float64)
    out[np.arange(values.size), values] = 1.0
    return out


def encode_node_labels(raw: np.ndarray, vocabulary: np.ndarray) -> np.ndarray:
    """One-hot encode discrete node labels against a dataset-wide vocabulary."""
    idx = np.searchsorted(vocabulary, raw)
    if np.any(idx >= vocabulary.size) or np.any(vocabulary[idx] != raw):
        raise DataError("node label outside dataset vocabulary")
    return one_hot(idx.astype(np.int64), vocabulary.size)


def encode_degrees(degrees: np.ndarray, max_degree: int) -> np.ndarray:
    """One-hot encode degrees clamped to a dataset-wide max-degree bucket."""
    clamped = np.minimum(degrees, max_degree).astype(np.int64)
    return one_hot(clamped, max_degree + 1)


# --- TU flat-file format --------------------------------------------------
#
# <name>_A.txt                "i, j" per line, 1-indexed global node ids
# <name>_graph_indicator.txt  graph id (1-indexed) per node line
# <name>_graph_labels.txt     one integer per graph
# <name>_node_labels.txt      one integer per node (optional)


def _read_int_column(path: Path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise DataError(f"{path.name}:{lineno}: expected an integer, got {line!r}") from exc
    return np.array(values, dtype=np.int64)


def _read_edge_pairs(path: Path, num_nodes: int) -> np.ndarray:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path.name}:{lineno}: expected 'i, j', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataError(f"{path.name}:{lineno}: non-integer node id in {line!r}") from exc
            if not (1 <= u <= num_nodes and 1 <= v <= num_nodes):
                raise DataError(f"{path.name}:{lineno}: node id out of range [1, {num_nodes}]")
            pairs.append((u, v, lineno))
    return np.array(pairs, dtype=np.int64).reshape(-1, 3)


def load_tu_dataset(directory, name: str) -> DatasetBundle:
    """Load a TU-format dataset from `directory/name` or `directory` itself.

    Graph labels are remapped to contiguous [0, num_classes). Edges are
    symmetrized and deduplicated. Node features are one-hot node labels
    when `<name>_node_labels.txt` exists, else one-hot clamped degrees.
    """
    directory = Path(directory)
    base = directory / name if (directory / name / f"{name}_A.txt").exists() else directory
    for required in (f"{name}_A.txt", f"{name}_graph_indicator.txt", f"{name}_graph_labels.txt"):
        if not (base / required).exists():
            raise FileNotFoundError(f"missing TU file: {base / required}")

    indicator = _read_int_column(base / f"{name}_graph_indicator.txt")
    graph_labels_raw = _read_int_column(base / f"{name}_graph_labels.txt")
    num_nodes_total = indicator.size
    num_graphs = graph_labels_raw.size
    if indicator.min(initial=1) < 1 or indicator.max(initial=1) > num_graphs:
        raise DataError(f"{name}_graph_indicator.txt: graph id out of range [1, {num_graphs}]")

    edges = _read_edge_pairs(base / f"{name}_A.txt", num_nodes_total)
    u, v = edges[:, 0] - 1, edges[:, 1] - 1
    cross = indicator[u] != indicator[v]
    if np.any(cross):
        lineno = int(edges[np.argmax(cross), 2])
        raise DataError(f"{name}_A.txt:{lineno}: edge connects nodes of different graphs")

    node_labels_path = base / f"{name}_node_labels.txt"
    raw_node_labels = _read_int_column(node_labels_path) if node_labels_path.exists() else None
    if raw_node_labels is not None and raw_node_labels.size != num_nodes_total:
        raise DataError(f"{name}_node_labels.txt: {raw_node_labels.size} lines for {num_nodes_total} nodes")

    # local node numbering per graph (TU files list nodes grouped by graph)
    order = np.argsort(indicator, kind="stable")
    local_index = np.empty(num_nodes_total, dtype=np.int64)
    counts = np.bincount(indicator - 1, minlength=num_graphs)
    starts = np.concatenate(([0], np.cumsum(counts)))
    local_index[order] = np.arange(num_nodes_total) - starts[indicator[order] - 1]

    classes = np.unique(graph_labels_raw)
    label_map = {int(c): i for i, c in enumerate(classes)}

    edge_graph = indicator[u] - 1
    vocab = np.unique(raw_node_labels) if raw_node_labels is not None else None

    graphs: list[Graph] = []
    per_graph_raw_labels: list[np.ndarray] = []
    degree_cap = 0
    for gi in range(num_graphs):
        n = int(counts[gi])
        if n == 0:
            raise DataError(f"{name}: graph {gi + 1} has no nodes")
        mask = edge_graph == gi
        local_edges = np.column_stack((local_index[u[mask]], local_index[v[mask]]))
        g = make_graph(n, local_edges, np.zeros((n, 1)), label_map[int(graph_labels_raw[gi])])
        graphs.append(g)
        degree_cap = max(degree_cap, int(g.degrees().max(initial=0)))
        if raw_node_labels is not None:
            node_mask = indicator - 1 == gi
            labels_here = np.empty(n, dtype=np.int64)
            labels_here[local_index[node_mask]] = raw_node_labels[node_mask]
            per_graph_raw_labels.append(labels_here)

    if vocab is not None:
        graphs = [with_features(g, encode_node_labels(labels, vocab))
                  for g, labels in zip(graphs, per_graph_raw_labels)]
        feature_dim = vocab.size
    else:
        graphs = [with_features(g, encode_degrees(g.degrees(), degree_cap)) for g in graphs]
        feature_dim = degree_cap + 1

    return DatasetBundle(
        graphs=graphs,
        num_classes=classes.size,
        feature_dim=feature_dim,
        name=name,
        node_labels_raw=per_graph_raw_labels if vocab is not None else None,
    )


def write_tu_dataset(bundle: DatasetBundle, directory, name: Optional[str] = None) -> Path:
    """Export a bundle as TU flat files (both edge directions written).

    Used for perturbed-dataset export; loading the result reproduces the
    bundle's graphs exactly.
    """
    name = name or bundle.name
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offsets = np.cumsum([0] + [g.num_nodes for g in bundle.graphs])
    with open(directory / f"{name}_A.txt", "w", newline="\n") as fh:
        for gi, g in enumerate(bundle.graphs):
            off = offsets[gi] + 1
            for i in range(g.num_nodes):
                for j in g.neighbors(i):
                    fh.write(f"{i + off}, {j + off}\n")
    with open(directory / f"{name}_graph_indicator.txt", "w", newline="\n") as fh:
        for gi, g in enumerate(bundle.graphs):
            fh.write(f"{gi + 1}\n" * g.num_nodes)
    with open(directory / f"{name}_graph_labels.txt", "w", newline="\n") as fh:
        for g in bundle.graphs:
            fh.write(f"{g.label}\n")
    if bundle.node_labels_raw is not None:
        with open(directory / f"{name}_node_labels.txt", "w", newline="\n") as fh:
            for labels in bundle.node_labels_raw:
                for value in labels:
                    fh.write(f"{value}\n")
    return directory


# --- adjacency operators --------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Symmetric sparse operator stored as COO index lists + values."""

    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    _csr: sp.csr_matrix = field(repr=False)

    def matmat(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def rmatmat(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x  # symmetric

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()


def _build_operator(n: int, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> SparseAdjacency:
    csr = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseAdjacency((n, n), rows, cols, vals, csr)


def normalized_adjacency(g: Graph) -> SparseAdjacency:
    """Symmetrically normalized adjacency with self-loops:
    D~^{-1/2} (A + I) D~^{-1/2}, where D~ is the degree matrix of A + I."""
    n = g.num_nodes
    deg_tilde = g.degrees() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg_tilde)
    src = np.repeat(np.arange(n, dtype=np.int64), g.degrees())
    rows = np.concatenate((src, np.arange(n, dtype=np.int64)))
    cols = np.concatenate((g.indices, np.arange(n, dtype=np.int64)))
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return _build_operator(n, rows, cols, vals)


def plain_adjacency(g: Graph) -> SparseAdjacency:
    """Unnormalized 0/1 adjacency (neighbor-sum operator)."""
    n = g.num_nodes
    rows = np.repeat(np.arange(n, dtype=np.int64), g.degrees())
    cols = g.indices.copy()
    vals = np.ones(rows.size, dtype=np.float64)
    return _build_operator(n, rows, cols, vals)


# --- synthetic graphs and perturbation -------------------------------------


def synth_random_graph(n: int, edge_rate: float, seed: int) -> Graph:
    """Erdos-Renyi style graph: each unordered pair is an edge independently
    with probability `edge_rate`. Features are degree one-hots."""
    if n < 2:
        raise ConfigError(f"synth_random_graph needs n >= 2, got {n}")
    if not 0.0 < edge_rate <= 1.0:
        raise ConfigError(f"edge_rate must be in (0, 1], got {edge_rate}")
    rng = np.random.default_rng(seed)
    chunks = []
    for i in range(n - 1):
        hits = np.nonzero(rng.random(n - 1 - i) < edge_rate)[0]
        if hits.size:
            chunks.append(np.column_stack((np.full(hits.size, i, dtype=np.int64),
                                           hits.astype(np.int64) + i + 1)))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), np.int64)
    g = make_graph(n, edges, np.zeros((n, 1)), 0)
    deg = g.degrees()
    return with_features(g, encode_degrees(deg, int(deg.max(initial=0))))


def _encode_pairs(u: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    return u * np.int64(n) + v


def flip_edges(g: Graph, rate: float, seed: int) -> Graph:
    """Add ceil(rate * |E|) spurious edges sampled uniformly from the
    non-edges; original edges (and features/label) are kept.

    If fewer non-edges exist than requested, the count is clamped.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"flip rate must be in [0, 1], got {rate}")
    n = g.num_nodes
    num_pairs = n * (n - 1) // 2
    existing = g.edge_array()
    k = math.ceil(rate * existing.shape[0])
    available = num_pairs - existing.shape[0]
    if k > available:
        log.warning("flip_edges: requested %d additions but only %d non-edges exist; clamping", k, available)
        k = available
    if k == 0:
        return g
    rng = np.random.default_rng(seed)
    existing_codes = set(_encode_pairs(existing[:, 0], existing[:, 1], n).tolist())
    if num_pairs <= 1_000_000:
        iu, ju = np.triu_indices(n, k=1)
        codes = _encode_pairs(iu.astype(np.int64), ju.astype(np.int64), n)
        mask = np.array([c not in existing_codes for c in codes.tolist()])
        non_edges = np.column_stack((iu[mask], ju[mask]))
        picked = non_edges[rng.choice(non_edges.shape[0], size=k, replace=False)]
    else:
        chosen: dict[int, tuple[int, int]] = {}
        while len(chosen) < k:
            cand = rng.integers(0, n, size=(2 * k, 2))
            u = np.minimum(cand[:, 0], cand[:, 1])
            v = np.maximum(cand[:, 0], cand[:, 1])
            for a, b in zip(u.tolist(), v.tolist()):
                if a == b:
                    continue
                code = a * n + b
                if code in existing_codes or code in chosen:
                    continue
                chosen[code] = (a, b)
                if len(chosen) == k:
                    break
        picked = np.array(list(chosen.values()), dtype=np.int64)
    combined = np.concatenate((existing, picked))
    return make_graph(n, combined, g.features, g.label)


# --- cross-validation folds -------------------------------------------------


def stratified_kfold(bundle: DatasetBundle, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic stratified k-fold split.

    Per-class counts across folds differ by at most one, and remainders are
    spread to the least-loaded folds so total fold sizes also differ by at
    most one. Returns (train_ids, test_ids) pairs, ids sorted ascending.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    labels = bundle.labels()
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(k)]
    fold_load = np.zeros(k, dtype=np.int64)
    for cls in range(bundle.num_classes):
        members = np.nonzero(labels == cls)[0]
        if members.size < k:
            raise ConfigError(f"class {cls} has {members.size} members, fewer than {k} folds")
        members = members[rng.permutation(members.size)]
        base, extra = divmod(members.size, k)
        counts = np.full(k, base, dtype=np.int64)
        if extra:
            # give remainders to the least-loaded folds (ties: lowest index)
            order = np.lexsort((np.arange(k), fold_load))
            counts[order[:extra]] += 1
        pos = 0
        for f in range(k):
            take = int(counts[f])
            fold_members[f].extend(members[pos:pos + take].tolist())
            pos += take
        fold_load += counts
    all_ids = np.arange(len(bundle.graphs))
    splits = []
    for f in range(k):
        test = np.array(sorted(fold_members[f]), dtype=np.int64)
        train = np.setdiff1d(all_ids, test)
        splits.append((train, test))
    return splits
