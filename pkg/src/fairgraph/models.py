"""Graph classifiers: two structure-agnostic baselines, GIN and GraphSAGE.

Graphs are batched as a disjoint union: one node-feature matrix, one
``(2, E)`` directed edge list with both directions of every edge, and a
graph-index vector mapping nodes to their graph.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .neural import OptimState, ParamSet, Tape

MODEL_KINDS = ("baseline_fingerprint", "baseline_deepsets", "gin", "graphsage")
AGGREGATIONS = ("sum", "mean", "max")


@dataclass(frozen=True)
class ModelConfig:
    model_kind: str
    layers: int = 1
    hidden_units: int = 32
    aggregation: Optional[str] = None
    epsilon_trainable: bool = False
    dropout: float = 0.0
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    l2: float = 0.0
    momentum: float = 0.0
    scheduler: str = "none"
    step_size: int = 50
    gamma: float = 0.5
    stop_criterion: Optional[str] = None  # overrides the policy criterion when set
    epochs: Optional[int] = None  # overrides policy max_epochs when set
    patience: Optional[int] = None  # overrides policy patience when set

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.model_kind in ("gin", "graphsage") and self.layers < 1:
            raise ValueError("GNNs need at least one layer")
        if self.model_kind == "graphsage":
            if self.aggregation not in AGGREGATIONS:
                raise ValueError(f"graphsage needs aggregation in {AGGREGATIONS}")
        elif self.aggregation is not None:
            raise ValueError("aggregation is only configurable for graphsage")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden_units < 1 or self.batch_size < 1:
            raise ValueError("hidden_units and batch_size must be positive")
        if self.stop_criterion not in (None, "validation_loss", "validation_accuracy"):
            raise ValueError(f"unknown stop criterion {self.stop_criterion!r}")

    @property
    def optim(self):
        return OptimState(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            l2=self.l2,
            momentum=self.momentum,
            scheduler=self.scheduler,
            step_size=self.step_size,
            gamma=self.gamma,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class GraphBatch:
    x: np.ndarray
    edge_index: np.ndarray
    graph_index: np.ndarray
    num_graphs: int
    labels: np.ndarray
    node_counts: np.ndarray


def make_batch(features, graphs, indices, dtype=np.float64):
    """Disjoint union of ``graphs[i]`` for ``i`` in ``indices``."""
    xs, edges, gidx, labels, counts = [], [], [], [], []
    offset = 0
    for pos, i in enumerate(indices):
        g = graphs[i]
        xs.append(features[i])
        edges.append(g.edge_index + offset)
        gidx.append(np.full(g.node_count, pos, dtype=np.int64))
        labels.append(g.label)
        counts.append(g.node_count)
        offset += g.node_count
    width = features[indices[0]].shape[1] if len(indices) else 0
    return GraphBatch(
        x=np.concatenate(xs, axis=0).astype(dtype) if xs else np.zeros((0, width), dtype=dtype),
        edge_index=np.concatenate(edges, axis=1) if edges else np.zeros((2, 0), dtype=np.int64),
        graph_index=np.concatenate(gidx) if gidx else np.zeros(0, dtype=np.int64),
        num_graphs=len(indices),
        labels=np.asarray(labels, dtype=np.int64),
        node_counts=np.asarray(counts, dtype=np.int64),
    )


class GraphModel:
    """Base class: owns a :class:`ParamSet` and maps a batch to logits."""

    uses_edges = True

    def __init__(self, config, in_dim, num_classes, init_seed=0, dtype=np.float64):
        self.config = config
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.params = ParamSet(init_seed=init_seed, dtype=dtype)
        self.build()

    def build(self):
        raise NotImplementedError

    def forward(self, tape, batch):
        raise NotImplementedError

    def _dense(self, name, fan_in, fan_out):
        self.params.glorot(f"{name}.W", fan_in, fan_out)
        self.params.zeros(f"{name}.b", 1, fan_out)

    def _apply(self, tape, name, x):
        return tape.linear(x, self.params[f"{name}.W"], self.params[f"{name}.b"])

    def _input(self, tape, batch):
        if batch.num_graphs and (batch.node_counts == 0).any():
            raise ValueError(f"{type(self).__name__} cannot embed an empty graph")
        return tape.constant(batch.x)

    def logits(self, batch):
        """Inference-mode forward pass returning a plain array."""
        return self.forward(Tape(train=False, dtype=self.params.dtype), batch).data


class FingerprintBaseline(GraphModel):
    """Sum-pool node features, then one hidden ReLU layer and an output layer."""

    uses_edges = False

    def build(self):
        h = self.config.hidden_units
        self._dense("hidden", self.in_dim, h)
        self._dense("out", h, self.num_classes)

    def forward(self, tape, batch):
        x = self._input(tape, batch)
        pooled = tape.pool_sum(x, batch.graph_index, batch.num_graphs)
        h = tape.relu(self._apply(tape, "hidden", pooled))
        h = tape.dropout(h, self.config.dropout)
        return self._apply(tape, "out", h)


class DeepSetsBaseline(GraphModel):
    """Per-node ReLU layer, sum pooling, then a one-hidden-layer classifier."""

    uses_edges = False

    def build(self):
        h = self.config.hidden_units
        self._dense("node", self.in_dim, h)
        self._dense("hidden", h, h)
        self._dense("out", h, self.num_classes)

    def forward(self, tape, batch):
        x = self._input(tape, batch)
        h = tape.relu(self._apply(tape, "node", x))
        pooled = tape.pool_sum(h, batch.graph_index, batch.num_graphs)
        z = tape.relu(self._apply(tape, "hidden", pooled))
        z = tape.dropout(z, self.config.dropout)
        return self._apply(tape, "out", z)


class GIN(GraphModel):
    """h <- MLP((1 + eps) h + sum of neighbours); readout concatenates the
    sum-pooled embeddings of the input and of every layer."""

    def build(self):
        c, h = self.config, self.config.hidden_units
        width = self.in_dim
        for layer in range(c.layers):
            self._dense(f"gin{layer}.mlp0", width, h)
            self._dense(f"gin{layer}.mlp1", h, h)
            if c.epsilon_trainable:
                self.params.zeros(f"gin{layer}.eps", 1, 1)
            width = h
        self._dense("out", self.in_dim + c.layers * h, self.num_classes)

    def _eps(self, tape, layer):
        name = f"gin{layer}.eps"
        return self.params[name] if name in self.params else tape.constant(np.zeros((1, 1)))

    def forward(self, tape, batch):
        h = self._input(tape, batch)
        readout = [tape.pool_sum(h, batch.graph_index, batch.num_graphs)]
        for layer in range(self.config.layers):
            agg = tape.scatter_sum(h, batch.edge_index)
            u = tape.add(tape.one_plus_scale(h, self._eps(tape, layer)), agg)
            u = tape.relu(self._apply(tape, f"gin{layer}.mlp0", u))
            h = tape.relu(self._apply(tape, f"gin{layer}.mlp1", u))
            readout.append(tape.pool_sum(h, batch.graph_index, batch.num_graphs))
        z = tape.dropout(tape.concat(readout), self.config.dropout)
        return self._apply(tape, "out", z)


class GraphSAGE(GraphModel):
    """Full-neighbourhood GraphSAGE with global max-pool readout."""

    def build(self):
        c, h = self.config, self.config.hidden_units
        width = self.in_dim
        for layer in range(c.layers):
            self._dense(f"sage{layer}", 2 * width, h)
            width = h
        self._dense("out", h, self.num_classes)

    def _aggregate(self, tape, h, edge_index):
        agg = self.config.aggregation
        if agg == "sum":
            return tape.scatter_sum(h, edge_index)
        if agg == "mean":
            return tape.scatter_mean(h, edge_index)
        return tape.scatter_max(h, edge_index)

    def forward(self, tape, batch):
        h = self._input(tape, batch)
        for layer in range(self.config.layers):
            neigh = self._aggregate(tape, h, batch.edge_index)
            h = tape.relu(self._apply(tape, f"sage{layer}", tape.concat([h, neigh])))
            h = tape.l2_normalize(h)
        pooled = tape.pool_max(h, batch.graph_index, batch.num_graphs)
        pooled = tape.dropout(pooled, self.config.dropout)
        return self._apply(tape, "out", pooled)


_REGISTRY = {
    "baseline_fingerprint": FingerprintBaseline,
    "baseline_deepsets": DeepSetsBaseline,
    "gin": GIN,
    "graphsage": GraphSAGE,
}


def build_model(config, in_dim, num_classes, init_seed=0, dtype=np.float64):
    return _REGISTRY[config.model_kind](config, in_dim, num_classes, init_seed, dtype)


def selected_depth(layers):
    """Median selected layer count across folds (mean of the middle two if even)."""
    layers = list(layers)
    if not layers:
        raise ValueError("no selected configurations to take the median of")
    med = statistics.median(layers)
    return int(med) if float(med).is_integer() else float(med)
