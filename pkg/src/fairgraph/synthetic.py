"""Small synthetic graph-classification tasks with a known source of signal.

* ``triangle_task``: trees versus trees with closed triangles. Graphs come in
  pairs of equal size, so node counts carry no label information.
* ``feature_count_task``: random topology; the label says whether node type
  0 outnumbers node type 1. Structure is irrelevant.
* ``degree_task``: sparse versus dense random graphs, again paired by size,
  with no node labels. Only degree (or structure) reveals the class.
"""

from __future__ import annotations

import numpy as np

from .graph_data import from_graphs, make_graph


def _rng(seed):
    return np.random.default_rng(seed)


def random_tree(n, rng):
    """Uniform random labelled tree via a Pruefer sequence."""
    if n <= 1:
        return []
    if n == 2:
        return [(0, 1)]
    seq = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=int)
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = int(np.flatnonzero(degree == 1)[0])
        edges.append((leaf, int(v)))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = np.flatnonzero(degree == 1)
    edges.append((int(u), int(w)))
    return edges


def _close_triangles(n, edges, count, rng):
    adj = {v: set() for v in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    edges = list(edges)
    for _ in range(count):
        centers = [v for v in range(n) if len(adj[v]) >= 2]
        c = centers[rng.integers(len(centers))]
        nbrs = sorted(adj[c])
        pairs = [(a, b) for i, a in enumerate(nbrs) for b in nbrs[i + 1:] if b not in adj[a]]
        if not pairs:
            continue
        a, b = pairs[rng.integers(len(pairs))]
        edges.append((a, b))
        adj[a].add(b)
        adj[b].add(a)
    return edges


def triangle_task(num_graphs=300, seed=0, size_range=(10, 16), triangles=(1, 3)):
    """Label 1 iff the graph contains a triangle."""
    rng = _rng(seed)
    graphs = []
    for _ in range(num_graphs // 2):
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        tree = random_tree(n, rng)
        graphs.append(make_graph(n, tree, 0))
        extra = int(rng.integers(triangles[0], triangles[1] + 1))
        graphs.append(make_graph(n, _close_triangles(n, tree, extra, rng), 1))
    return from_graphs("TRIANGLES", graphs)


def _random_topology(n, rng, extra_edge_prob=0.1):
    edges = random_tree(n, rng)
    extra = rng.random((n, n)) < extra_edge_prob
    edges += [(i, j) for i in range(n) for j in range(i + 1, n) if extra[i, j]]
    return edges


def feature_count_task(num_graphs=300, seed=0, size_range=(8, 16), num_types=3, min_gap=1):
    """Label 1 iff node type 0 is more frequent than node type 1.

    Graphs whose two counts differ by less than ``min_gap`` are redrawn.
    """
    rng = _rng(seed)
    graphs = []
    quota = [num_graphs // 2, num_graphs - num_graphs // 2]
    while len(graphs) < num_graphs:
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        types = rng.integers(0, num_types, size=n)
        c0, c1 = int((types == 0).sum()), int((types == 1).sum())
        label = int(c0 > c1)
        if abs(c0 - c1) < min_gap or not quota[label]:
            continue
        quota[label] -= 1
        graphs.append(make_graph(n, _random_topology(n, rng), label, node_labels=types.tolist()))
    return from_graphs("FEATURE_COUNTS", graphs)


def _gnp(n, p, rng):
    mask = np.triu(rng.random((n, n)) < p, k=1)
    return list(zip(*np.nonzero(mask)))


def degree_task(num_graphs=300, seed=0, size_range=(12, 20), p_sparse=0.15, p_dense=0.35):
    """Label 1 for dense G(n, p) graphs, 0 for sparse ones of the same size."""
    rng = _rng(seed)
    graphs = []
    for _ in range(num_graphs // 2):
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        graphs.append(make_graph(n, _gnp(n, p_sparse, rng), 0))
        graphs.append(make_graph(n, _gnp(n, p_dense, rng), 1))
    return from_graphs("DEGREE_SOCIAL", graphs)


def noisy(ds, flip, seed=0):
    """Copy of ``ds`` with a fraction ``flip`` of binary labels flipped."""
    rng = _rng(seed)
    graphs = []
    for g in ds.graphs:
        label = 1 - g.label if rng.random() < flip else g.label
        graphs.append(make_graph(g.node_count, g.edges, label, g.node_labels, g.node_attributes))
    return from_graphs(ds.name, graphs, relabel=False, num_classes=ds.num_classes)
