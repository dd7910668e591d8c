from pathlib import Path

import numpy as np
import pytest

from fairgraph.graph_data import from_graphs, make_graph

FIXTURES = Path(__file__).parent / "fixtures"


def write_tu(root, name, files):
    root.mkdir(parents=True, exist_ok=True)
    for suffix, rows in files.items():
        (root / f"{name}_{suffix}.txt").write_text("".join(f"{r}\n" for r in rows))
    return root


@pytest.fixture
def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)], 0)


@pytest.fixture
def micro_graphs():
    """Three small graphs with distinct topology, for gradient checks."""
    return [
        make_graph(4, [(0, 1), (1, 2), (2, 3)], 0),
        make_graph(3, [(0, 1), (1, 2), (0, 2)], 1),
        make_graph(5, [(0, 1), (0, 2), (0, 3), (3, 4)], 0),
    ]


@pytest.fixture
def balanced_dataset():
    rng = np.random.default_rng(3)
    graphs = []
    for i in range(60):
        n = int(rng.integers(3, 8))
        edges = [(j, j + 1) for j in range(n - 1)]
        graphs.append(make_graph(n, edges, i % 3, node_labels=rng.integers(0, 4, n).tolist()))
    return from_graphs("BAL", graphs)
