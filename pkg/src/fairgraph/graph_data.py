"""Graph containers, the TU-Dortmund text-format parser and dataset statistics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

DATASET_FORMAT = "fairgraph.dataset/1"


class DataFormatError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class Graph:
    """One simple undirected graph with per-node data and a class label.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted. Use :func:`make_graph` to normalise arbitrary edge lists.
    """

    node_count: int
    edges: tuple
    label: int
    node_labels: Optional[tuple] = None
    node_attributes: Optional[tuple] = None

    def __post_init__(self):
        n = self.node_count
        if n < 0:
            raise DataFormatError("node_count must be non-negative")
        prev = None
        for e in self.edges:
            i, j = e
            if not (0 <= i < j < n):
                raise DataFormatError(f"edge {e} is not a normalised edge of a {n}-node graph")
            if prev is not None and e <= prev:
                raise DataFormatError("edges must be sorted and unique")
            prev = e
        if self.node_labels is not None and len(self.node_labels) != n:
            raise DataFormatError("node_labels length differs from node_count")
        if self.node_attributes is not None:
            if len(self.node_attributes) != n:
                raise DataFormatError("node_attributes length differs from node_count")
            if len({len(a) for a in self.node_attributes}) > 1:
                raise DataFormatError("node attribute vectors have inconsistent width")

    @property
    def edge_count(self):
        return len(self.edges)

    @cached_property
    def edge_index(self):
        """``(2, 2E)`` int array listing every edge in both directions."""
        if not self.edges:
            return np.zeros((2, 0), dtype=np.int64)
        e = np.asarray(self.edges, dtype=np.int64).T
        return np.concatenate([e, e[::-1]], axis=1)

    @cached_property
    def degrees(self):
        deg = np.zeros(self.node_count, dtype=np.int64)
        if self.edges:
            e = np.asarray(self.edges, dtype=np.int64)
            np.add.at(deg, e.ravel(), 1)
        return deg

    def permuted(self, perm):
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        edges = [(inv[i], inv[j]) for i, j in self.edges]
        labels = None if self.node_labels is None else [self.node_labels[p] for p in perm]
        attrs = None if self.node_attributes is None else [self.node_attributes[p] for p in perm]
        return make_graph(self.node_count, edges, self.label, labels, attrs)

    def without_edges(self):
        return Graph(self.node_count, (), self.label, self.node_labels, self.node_attributes)

    def to_dict(self):
        return {
            "n": self.node_count,
            "edges": [list(e) for e in self.edges],
            "label": self.label,
            "node_labels": None if self.node_labels is None else list(self.node_labels),
            "node_attributes": None
            if self.node_attributes is None
            else [list(a) for a in self.node_attributes],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            node_count=int(d["n"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            label=int(d["label"]),
            node_labels=None if d.get("node_labels") is None else tuple(d["node_labels"]),
            node_attributes=None
            if d.get("node_attributes") is None
            else tuple(tuple(float(x) for x in a) for a in d["node_attributes"]),
        )


def make_graph(node_count, edges, label, node_labels=None, node_attributes=None, counters=None):
    """Build a :class:`Graph`, dropping self-loops and merging duplicate edges.

    ``counters`` (a dict) is incremented with ``self_loops`` and ``duplicates``.
    """
    seen = set()
    loops = dups = 0
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise DataFormatError(f"edge ({i}, {j}) references unknown node")
        if i == j:
            loops += 1
            continue
        key = (i, j) if i < j else (j, i)
        if key in seen:
            dups += 1
            continue
        seen.add(key)
    if counters is not None:
        counters["self_loops"] = counters.get("self_loops", 0) + loops
        counters["duplicates"] = counters.get("duplicates", 0) + dups
    return Graph(
        node_count=int(node_count),
        edges=tuple(sorted(seen)),
        label=int(label),
        node_labels=None if node_labels is None else tuple(int(x) for x in node_labels),
        node_attributes=None
        if node_attributes is None
        else tuple(tuple(float(x) for x in a) for a in node_attributes),
    )


@dataclass(frozen=True)
class GraphDataset:
    name: str
    graphs: tuple
    num_classes: int
    label_values: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for g in self.graphs:
            if not 0 <= g.label < self.num_classes:
                raise DataFormatError(f"graph label {g.label} outside [0, {self.num_classes})")
        if self.graphs and min(self.class_counts) < 1:
            raise DataFormatError("every class needs at least one graph")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @cached_property
    def labels(self):
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def class_counts(self):
        return [int(c) for c in np.bincount(self.labels, minlength=self.num_classes)]

    @property
    def has_node_labels(self):
        return bool(self.graphs) and all(g.node_labels is not None for g in self.graphs)

    @property
    def has_node_attributes(self):
        return bool(self.graphs) and all(g.node_attributes is not None for g in self.graphs)

    def node_label_values(self):
        """Sorted distinct node labels over the whole dataset."""
        vals = set()
        for g in self.graphs:
            if g.node_labels is not None:
                vals.update(g.node_labels)
        return sorted(vals)

    def subset(self, indices, name=None):
        return from_graphs(name or self.name, [self.graphs[i] for i in indices], relabel=False,
                           num_classes=self.num_classes)

    def to_json(self):
        doc = {
            "format": DATASET_FORMAT,
            "name": self.name,
            "num_classes": self.num_classes,
            "label_values": list(self.label_values),
            "meta": self.meta,
            "graphs": [g.to_dict() for g in self.graphs],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != DATASET_FORMAT:
            raise DataFormatError(f"unsupported dataset format {doc.get('format')!r}")
        return cls(
            name=doc["name"],
            graphs=tuple(Graph.from_dict(g) for g in doc["graphs"]),
            num_classes=int(doc["num_classes"]),
            label_values=tuple(doc.get("label_values", ())),
            meta=doc.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def from_graphs(name, graphs, relabel=True, num_classes=None):
    """Assemble a dataset; with ``relabel`` graph labels map to [0, C) by sorted value."""
    graphs = list(graphs)
    if relabel:
        values = sorted({g.label for g in graphs})
        remap = {v: k for k, v in enumerate(values)}
        graphs = [
            Graph(g.node_count, g.edges, remap[g.label], g.node_labels, g.node_attributes)
            for g in graphs
        ]
        return GraphDataset(name, tuple(graphs), len(values), tuple(values))
    if num_classes is None:
        num_classes = max((g.label for g in graphs), default=-1) + 1
    return GraphDataset(name, tuple(graphs), num_classes, tuple(range(num_classes)))


# ---------------------------------------------------------------------------
# TU format
# ---------------------------------------------------------------------------


def _read_rows(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    while lines and not lines[-1]:
        lines.pop()
    return lines


def _ints(path, row):
    try:
        return [int(tok.strip()) for tok in row.split(",")]
    except ValueError:
        raise DataFormatError(f"{path.name}: non-integer token in line {row!r}") from None


def _int_column(path):
    out = []
    for lineno, row in enumerate(_read_rows(path), start=1):
        vals = _ints(path, row)
        if len(vals) != 1:
            raise DataFormatError(f"{path.name}:{lineno}: expected one integer, got {row!r}")
        out.append(vals[0])
    return out


def parse_tu_dataset(root_dir, name):
    """Parse ``NAME_*.txt`` files under ``root_dir`` (or ``root_dir/NAME``)."""
    root = Path(root_dir)
    if not (root / f"{name}_A.txt").exists() and (root / name / f"{name}_A.txt").exists():
        root = root / name
    paths = {k: root / f"{name}_{k}.txt" for k in
             ("A", "graph_indicator", "graph_labels", "node_labels", "node_attributes")}
    for k in ("A", "graph_indicator", "graph_labels"):
        if not paths[k].exists():
            raise DataFormatError(f"missing mandatory file {paths[k]}")

    indicator = _int_column(paths["graph_indicator"])
    graph_labels = _int_column(paths["graph_labels"])
    num_nodes, num_graphs = len(indicator), len(graph_labels)

    for node, gid in enumerate(indicator, start=1):
        if not 1 <= gid <= num_graphs:
            raise DataFormatError(f"node {node} assigned to no graph (graph id {gid})")

    # global 1-based node id -> (graph, local 0-based id)
    local = [0] * num_nodes
    sizes = [0] * num_graphs
    for node, gid in enumerate(indicator):
        local[node] = sizes[gid - 1]
        sizes[gid - 1] += 1

    node_labels = None
    if paths["node_labels"].exists():
        node_labels = _int_column(paths["node_labels"])
        if len(node_labels) != num_nodes:
            raise DataFormatError("node_labels row count differs from graph_indicator")

    node_attrs = None
    if paths["node_attributes"].exists():
        node_attrs, width = [], None
        for lineno, row in enumerate(_read_rows(paths["node_attributes"]), start=1):
            try:
                vec = [float(tok.strip()) for tok in row.split(",")]
            except ValueError:
                raise DataFormatError(f"node_attributes:{lineno}: non-numeric token") from None
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise DataFormatError(
                    f"node_attributes:{lineno}: width {len(vec)} inconsistent with {width}")
            node_attrs.append(vec)
        if len(node_attrs) != num_nodes:
            raise DataFormatError("node_attributes row count differs from graph_indicator")

    edges = [[] for _ in range(num_graphs)]
    for lineno, row in enumerate(_read_rows(paths["A"]), start=1):
        pair = _ints(paths["A"], row)
        if len(pair) != 2:
            raise DataFormatError(f"{name}_A.txt:{lineno}: expected 'i, j', got {row!r}")
        i, j = pair
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise DataFormatError(f"{name}_A.txt:{lineno}: edge references unknown node")
        gi, gj = indicator[i - 1], indicator[j - 1]
        if gi != gj:
            raise DataFormatError(f"{name}_A.txt:{lineno}: edge joins graphs {gi} and {gj}")
        edges[gi - 1].append((local[i - 1], local[j - 1]))

    members = [[] for _ in range(num_graphs)]
    for node, gid in enumerate(indicator):
        members[gid - 1].append(node)

    counters = {}
    graphs = []
    for g in range(num_graphs):
        nodes = members[g]
        graphs.append(make_graph(
            sizes[g],
            edges[g],
            graph_labels[g],
            None if node_labels is None else [node_labels[v] for v in nodes],
            None if node_attrs is None else [node_attrs[v] for v in nodes],
            counters=counters,
        ))
    if counters.get("self_loops"):
        log.warning("%s: dropped %d self-loops", name, counters["self_loops"])
    ds = from_graphs(name, graphs)
    ds.meta.update({
        "self_loops_dropped": counters.get("self_loops", 0),
        "duplicate_directed_edges_merged": counters.get("duplicates", 0),
    })
    return ds


def write_tu_dataset(ds, root_dir, name=None, label_values=None):
    """Write ``ds`` as TU text files (both directions of every edge)."""
    name = name or ds.name
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    values = list(label_values or ds.label_values or range(ds.num_classes))
    a_rows, ind_rows, nl_rows, na_rows = [], [], [], []
    offset = 0
    for gid, g in enumerate(ds.graphs, start=1):
        for i, j in g.edges:
            a_rows.append(f"{i + offset + 1}, {j + offset + 1}")
            a_rows.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_rows += [str(gid)] * g.node_count
        if g.node_labels is not None:
            nl_rows += [str(v) for v in g.node_labels]
        if g.node_attributes is not None:
            na_rows += [", ".join(repr(float(x)) for x in a) for a in g.node_attributes]
        offset += g.node_count

    def put(suffix, rows):
        (root / f"{name}_{suffix}.txt").write_text("".join(r + "\n" for r in rows))

    put("A", a_rows)
    put("graph_indicator", ind_rows)
    put("graph_labels", [str(values[g.label]) for g in ds.graphs])
    if ds.has_node_labels:
        put("node_labels", nl_rows)
    if ds.has_node_attributes:
        put("node_attributes", na_rows)
    return root


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatsRecord:
    name: str
    graphs: int
    classes: int
    mean_nodes: float
    mean_edges: float
    node_labels: Optional[int]

    def as_row(self):
        nl = "-" if self.node_labels is None else str(self.node_labels)
        return (f"{self.name:<14} {self.graphs:>6} {self.classes:>3} "
                f"{self.mean_nodes:>9.2f} {self.mean_edges:>9.2f} {nl:>5}")


def dataset_stats(ds):
    if len(ds) == 0:
        raise ValueError(f"dataset {ds.name!r} is empty")
    nodes = np.array([g.node_count for g in ds.graphs], dtype=float)
    edges = np.array([g.edge_count for g in ds.graphs], dtype=float)
    return StatsRecord(
        name=ds.name,
        graphs=len(ds),
        classes=ds.num_classes,
        mean_nodes=float(nodes.mean()),
        mean_edges=float(edges.mean()),
        node_labels=len(ds.node_label_values()) if ds.has_node_labels else None,
    )
