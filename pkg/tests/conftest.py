"""Shared fixtures: small named graphs, a synthetic labeled dataset, and
location of the real MUTAG files when present."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from agformer.graphs import DatasetBundle, Graph, encode_degrees, make_graph


def build_graph(num_nodes: int, edges, label: int = 0, feature_dim: int = 0) -> Graph:
    """Graph with degree one-hot features (or `feature_dim` zero columns)."""
    g = make_graph(num_nodes, edges, np.zeros((num_nodes, max(feature_dim, 1))), label)
    if feature_dim:
        return g
    from agformer.graphs import with_features
    deg = g.degrees()
    return with_features(g, encode_degrees(deg, int(deg.max(initial=0))))


@pytest.fixture
def triangle():
    return build_graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return build_graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def two_triangles():
    return build_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


@pytest.fixture
def clique_bridge():
    # two 3-cliques joined by a single bridge edge
    return build_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])


@pytest.fixture
def toy6():
    """Fixed 6-node graph used for end-to-end gradient checks."""
    rng = np.random.default_rng(1234)
    edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)]
    g = make_graph(6, edges, rng.standard_normal((6, 4)), label=1)
    return g


# named small graphs for the Louvain-vs-bruteforce comparisons (all n <= 8)
def louvain_fixture_graphs() -> dict[str, Graph]:
    return {
        "two_triangles": build_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]),
        "clique_bridge": build_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]),
        "k4": build_graph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)]),
        "path4": build_graph(4, [(0, 1), (1, 2), (2, 3)]),
        "cycle6": build_graph(6, [(i, (i + 1) % 6) for i in range(6)]),
        "cycle8": build_graph(8, [(i, (i + 1) % 8) for i in range(8)]),
        "star6": build_graph(6, [(0, i) for i in range(1, 6)]),
        "two_squares_bridge": build_graph(
            8, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4)]),
        "barbell_k4": build_graph(
            8, [(i, j) for i in range(4) for j in range(i + 1, 4)]
               + [(i + 4, j + 4) for i in range(4) for j in range(i + 1, 4)]
               + [(3, 4)]),
    }


def synthetic_bundle(num_graphs: int = 40, seed: int = 7, name: str = "SYNTH") -> DatasetBundle:
    """Deterministic two-class dataset: sparse ER graphs vs. two dense
    cliques joined by a couple of bridges. Degree one-hot features with a
    shared bucket across the bundle, like the TU loader produces."""
    rng = np.random.default_rng(seed)
    raw = []
    for i in range(num_graphs):
        label = i % 2
        n = int(rng.integers(10, 17))
        if label == 0:
            edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.18]
            while not edges:
                edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.18]
        else:
            half = n // 2
            edges = [(a, b) for a in range(half) for b in range(a + 1, half)]
            edges += [(a, b) for a in range(half, n) for b in range(a + 1, n)]
            edges += [(int(rng.integers(0, half)), int(rng.integers(half, n))) for _ in range(2)]
        raw.append(make_graph(n, edges, np.zeros((n, 1)), label))
    cap = max(int(g.degrees().max(initial=0)) for g in raw)
    from agformer.graphs import with_features
    graphs = [with_features(g, encode_degrees(g.degrees(), cap)) for g in raw]
    return DatasetBundle(graphs=graphs, num_classes=2, feature_dim=cap + 1, name=name)


@pytest.fixture(scope="session")
def synth_bundle():
    return synthetic_bundle()


def mutag_dir() -> Path | None:
    """Real MUTAG TU files, if available. Checked locations:
    $AGF_DATA_DIR/MUTAG and tests/data/MUTAG."""
    candidates = []
    env = os.environ.get("AGF_DATA_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).parent / "data")
    for root in candidates:
        if (root / "MUTAG" / "MUTAG_A.txt").exists() or (root / "MUTAG_A.txt").exists():
            return root
    return None


MUTAG_HELP = (
    "real MUTAG dataset not found: place the TU flat files (MUTAG_A.txt, "
    "MUTAG_graph_indicator.txt, MUTAG_graph_labels.txt, MUTAG_node_labels.txt) "
    "under $AGF_DATA_DIR/MUTAG or tests/data/MUTAG"
)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "acceptance" in getattr(rep, "keywords", {}):
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append((rep.nodeid.split("::")[-1], verdict))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
