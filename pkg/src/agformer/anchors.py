"""Anchor generation: Louvain community detection and assignment matrices.

Louvain here is fully deterministic: nodes are scanned in ascending id
during local moving, gain ties break toward the smallest community id,
and aggregation relabels communities in ascending order. Anchors derived
from it are therefore reproducible without any seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .graphs import Graph

# minimum modularity gain for a local move
GAIN_THRESHOLD = 1e-7


@dataclass(frozen=True)
class Partition:
    """Map from node index to community index; ids contiguous from 0."""

    assignment: np.ndarray
    num_communities: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1:
            raise DataError("partition assignment must be a flat array")
        present = np.unique(a)
        if not np.array_equal(present, np.arange(self.num_communities)):
            raise DataError("community ids must be contiguous from 0 with no empty community")


@dataclass(frozen=True, eq=False)
class AnchorAssignment:
    """Sparse one-hot node-to-community assignment (the C x N matrix whose
    row means produce anchor features)."""

    assignment: np.ndarray
    community_sizes: np.ndarray
    _mean_matrix: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def num_communities(self) -> int:
        return self.community_sizes.size

    @property
    def num_nodes(self) -> int:
        return self.assignment.size

    def to_dense(self) -> np.ndarray:
        s = np.zeros((self.num_communities, self.num_nodes), dtype=np.float64)
        s[self.assignment, np.arange(self.num_nodes)] = 1.0
        return s

    def mean_matrix(self) -> np.ndarray:
        """Row-normalized assignment: applying it to node features yields
        per-community means. Cached; treat as read-only."""
        if self._mean_matrix is None:
            m = self.to_dense()
            m /= self.community_sizes[:, None]
            object.__setattr__(self, "_mean_matrix", m)
        return self._mean_matrix


def assignment_matrix(p: Partition) -> AnchorAssignment:
    sizes = np.bincount(p.assignment, minlength=p.num_communities)
    if np.any(sizes == 0):
        raise DataError("partition has an empty community")
    return AnchorAssignment(p.assignment.copy(), sizes.astype(np.int64))


def modularity(g: Graph, p: Partition) -> float:
    """Newman modularity at resolution 1:
    Q = sum_c (e_c / m - (d_c / 2m)^2)."""
    m = g.num_edges
    if m == 0:
        raise DataError("modularity is undefined for a graph with no edges")
    if p.assignment.size != g.num_nodes:
        raise DataError(f"partition covers {p.assignment.size} nodes, graph has {g.num_nodes}")
    edges = g.edge_array()
    cu = p.assignment[edges[:, 0]]
    cv = p.assignment[edges[:, 1]]
    intra = np.bincount(cu[cu == cv], minlength=p.num_communities)
    comm_deg = np.bincount(p.assignment, weights=g.degrees().astype(np.float64),
                           minlength=p.num_communities)
    return float(np.sum(intra / m - (comm_deg / (2.0 * m)) ** 2))


def random_partition(n: int, c: int, seed: int) -> Partition:
    """Uniformly random node-to-group assignment, resampled until no group
    is empty (bounded retries; see fallback below)."""
    if not 1 <= c <= n:
        raise ConfigError(f"need 1 <= c <= n, got c={c}, n={n}")
    rng = np.random.default_rng(seed)
    if c == n:
        # the only surjections are permutations; sample one directly
        return Partition(rng.permutation(n).astype(np.int64), c)
    for _ in range(200):
        assignment = rng.integers(0, c, size=n)
        if np.unique(assignment).size == c:
            return Partition(assignment.astype(np.int64), c)
    # rejection is hopeless when c is close to n: pin one random node per
    # group, fill the rest uniformly
    assignment = np.empty(n, dtype=np.int64)
    perm = rng.permutation(n)
    assignment[perm[:c]] = np.arange(c)
    assignment[perm[c:]] = rng.integers(0, c, size=n - c)
    return Partition(assignment, c)


# --- Louvain ----------------------------------------------------------------


class _LevelGraph:
    """Weighted graph for one Louvain level. Neighbor lists never contain
    the node itself; self-loop weight is tracked separately and counts
    twice toward the weighted degree."""

    __slots__ = ("n", "nbr", "w", "self_w", "deg", "m2")

    def __init__(self, n, nbr, w, self_w):
        self.n = n
        self.nbr = nbr
        self.w = w
        self.self_w = self_w
        self.deg = np.array([w[i].sum() for i in range(n)]) + 2.0 * self_w
        self.m2 = float(self.deg.sum())


def _level_from_graph(g: Graph) -> _LevelGraph:
    nbr = [g.neighbors(i).astype(np.int64) for i in range(g.num_nodes)]
    w = [np.ones(len(a)) for a in nbr]
    return _LevelGraph(g.num_nodes, nbr, w, np.zeros(g.num_nodes))


def _one_level(lg: _LevelGraph) -> tuple[np.ndarray, bool]:
    """Local-moving phase. Returns (contiguous community labels, moved?)."""
    comm = np.arange(lg.n, dtype=np.int64)
    comm_tot = lg.deg.copy()
    threshold = GAIN_THRESHOLD * (lg.m2 / 2.0)
    moved_any = False
    while True:
        moved_sweep = False
        for i in range(lg.n):
            ci = int(comm[i])
            k_i = lg.deg[i]
            links: dict[int, float] = {}
            for j, wij in zip(lg.nbr[i], lg.w[i]):
                cj = int(comm[j])
                links[cj] = links.get(cj, 0.0) + wij
            comm_tot[ci] -= k_i
            # scaled gain of joining community c (constant terms dropped):
            # k_{i,c} - tot(c) * k_i / 2m
            gain_stay = links.get(ci, 0.0) - comm_tot[ci] * k_i / lg.m2
            best_c, best_gain = ci, gain_stay
            for c in sorted(links):
                if c == ci:
                    continue
                gain = links[c] - comm_tot[c] * k_i / lg.m2
                if gain > best_gain:
                    best_c, best_gain = c, gain
            if best_c != ci and best_gain - gain_stay > threshold:
                comm[i] = best_c
                moved_sweep = moved_any = True
            comm_tot[comm[i]] += k_i
        if not moved_sweep:
            break
    # relabel to contiguous ids, ascending
    used, relabeled = np.unique(comm, return_inverse=True)
    return relabeled.astype(np.int64), moved_any


def _aggregate(lg: _LevelGraph, comm: np.ndarray) -> _LevelGraph:
    c = int(comm.max()) + 1
    self_w = np.zeros(c)
    for i in range(lg.n):
        self_w[comm[i]] += lg.self_w[i]
    cross: dict[tuple[int, int], float] = {}
    for i in range(lg.n):
        ci = int(comm[i])
        for j, wij in zip(lg.nbr[i], lg.w[i]):
            if j <= i:
                continue  # each undirected edge once
            cj = int(comm[j])
            if ci == cj:
                self_w[ci] += wij
            else:
                key = (ci, cj) if ci < cj else (cj, ci)
                cross[key] = cross.get(key, 0.0) + wij
    nbr_lists: list[list[int]] = [[] for _ in range(c)]
    w_lists: list[list[float]] = [[] for _ in range(c)]
    for (a, b), wab in sorted(cross.items()):
        nbr_lists[a].append(b)
        w_lists[a].append(wab)
        nbr_lists[b].append(a)
        w_lists[b].append(wab)
    nbr = []
    w = []
    for i in range(c):
        ids = np.array(nbr_lists[i], dtype=np.int64)
        ws = np.array(w_lists[i])
        order = np.argsort(ids, kind="stable")
        nbr.append(ids[order])
        w.append(ws[order])
    return _LevelGraph(c, nbr, w, self_w)


def louvain(g: Graph) -> Partition:
    """Two-phase Louvain: greedy local moving, then community aggregation,
    repeated until no move improves modularity by more than the threshold."""
    n = g.num_nodes
    if n == 0:
        raise DataError("cannot partition an empty graph")
    if g.num_edges == 0:
        # no basis for merging; every node is its own community
        return Partition(np.arange(n, dtype=np.int64), n)
    lg = _level_from_graph(g)
    mapping = np.arange(n, dtype=np.int64)
    while True:
        comm, moved = _one_level(lg)
        mapping = comm[mapping]
        if not moved:
            break
        lg = _aggregate(lg, comm)
    return Partition(mapping, int(mapping.max()) + 1)
