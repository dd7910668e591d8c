"""Whole-tensor reverse-mode differentiation over a recorded operation tape.

Every op takes and returns 2-D :class:`Tensor` objects. A :class:`Tape`
records the ops of one forward pass; :meth:`Tape.backward` replays them in
reverse and accumulates gradients into every tensor that requires them.

The pure numpy kernels (``relu``, ``scatter_sum``, ...) are exposed at module
level as well so they can be used and tested without a tape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "relu",
    "dropout_mask",
    "softmax",
    "softmax_cross_entropy",
    "scatter_sum",
    "scatter_mean",
    "scatter_max",
    "graph_pool_sum",
    "graph_pool_max",
]

_NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    """A 2-D array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def _check_index(index, size, what):
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= size):
        raise IndexError(f"{what} index out of range [0, {size})")
    return index


# ---------------------------------------------------------------------------
# pure kernels
# ---------------------------------------------------------------------------


def relu(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0)


def dropout_mask(shape, p, rng):
    """Inverted-dropout mask: kept units are scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over rows and the row-wise class probabilities."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} do not match labels {labels.shape}")
    _check_finite(logits, "logits")
    _check_index(labels, logits.shape[1], "label")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    nll = log_norm - z[np.arange(len(labels)), labels]
    return float(nll.mean()), softmax(logits)


def scatter_sum(x, edge_index, num_nodes=None):
    """Sum of source-node rows into each target node.

    ``edge_index`` is a ``(2, E)`` array of directed (source, target) pairs;
    undirected graphs list both directions.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0] if num_nodes is None else num_nodes
    src, dst = _edges(edge_index, x.shape[0], n)
    out = np.zeros((n, x.shape[1]), dtype=x.dtype)
    np.add.at(out, dst, x[src])
    return out


def scatter_mean(x, edge_index, num_nodes=None):
    """Mean over in-neighbours; nodes with no neighbours get the zero vector."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0] if num_nodes is None else num_nodes
    src, dst = _edges(edge_index, x.shape[0], n)
    total = scatter_sum(x, edge_index, n)
    deg = np.bincount(dst, minlength=n).astype(x.dtype)
    return total / np.maximum(deg, 1.0)[:, None]


def scatter_max(x, edge_index, num_nodes=None):
    """Element-wise max over in-neighbours; zero vector for isolated nodes."""
    out, _ = _scatter_max_with_arg(np.asarray(x, dtype=float), edge_index, num_nodes)
    return out


def graph_pool_sum(x, graph_index, num_graphs=None):
    x = np.asarray(x, dtype=float)
    g = _pool_size(graph_index, num_graphs)
    gi = _check_index(graph_index, g, "graph")
    out = np.zeros((g, x.shape[1]), dtype=x.dtype)
    np.add.at(out, gi, x)
    return out


def graph_pool_max(x, graph_index, num_graphs=None):
    x = np.asarray(x, dtype=float)
    g = _pool_size(graph_index, num_graphs)
    out, _ = _segment_max(x, _check_index(graph_index, g, "graph"), g)
    return out


def _pool_size(graph_index, num_graphs):
    if num_graphs is not None:
        return num_graphs
    graph_index = np.asarray(graph_index)
    return int(graph_index.max()) + 1 if graph_index.size else 0


def _edges(edge_index, num_src, num_dst):
    edge_index = np.asarray(edge_index, dtype=np.int64).reshape(2, -1)
    src = _check_index(edge_index[0], num_src, "edge source")
    dst = _check_index(edge_index[1], num_dst, "edge target")
    return src, dst


def _segment_max(values, segment, num_segments):
    """Row-wise max per segment; returns (out, argrow) with -1 for empty segments."""
    d = values.shape[1]
    out = np.zeros((num_segments, d), dtype=values.dtype)
    arg = np.full((num_segments, d), -1, dtype=np.int64)
    if values.shape[0] == 0:
        return out, arg
    order = np.lexsort((np.arange(len(segment)), segment))
    seg_sorted = segment[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    present = seg_sorted[starts]
    vals = values[order]
    maxima = np.maximum.reduceat(vals, starts, axis=0)
    out[present] = maxima
    # first row in each segment attaining the max receives the gradient
    block_of_row = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(order)]))
    position = np.arange(len(order))[:, None]
    hit = np.where(vals == maxima[block_of_row], position, len(order))
    first = np.minimum.reduceat(hit, starts, axis=0)
    arg[present] = order[first]
    return out, arg


def _scatter_max_with_arg(x, edge_index, num_nodes):
    n = x.shape[0] if num_nodes is None else num_nodes
    src, dst = _edges(edge_index, x.shape[0], n)
    out, arg = _segment_max(x[src], dst, n)
    if len(src) == 0:
        return out, arg
    # arg indexes into the gathered message rows; map back to source nodes
    src_arg = np.where(arg >= 0, src[np.maximum(arg, 0)], -1)
    return out, src_arg


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Tape:
    """Records one forward pass and differentiates it.

    ``train`` switches dropout on; ``rng`` supplies dropout masks.
    """

    def __init__(self, train=False, rng=None, dtype=np.float64):
        self.train = train
        self.rng = rng
        self.dtype = dtype
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def _record(self, out_data, inputs, backward):
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=needs)
        if needs:
            self._ops.append((out, backward))
        return out

    def constant(self, data):
        return Tensor(np.asarray(data, dtype=self.dtype))

    def backward(self, loss):
        if not self._ops:
            raise RuntimeError("backward called before any differentiable forward op")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._ops):
            fn(out.grad)
        self._ops.clear()

    # -- dense ops -----------------------------------------------------------

    def matmul(self, x, w):
        if x.cols != w.rows:
            raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")

        def back(g):
            if x.requires_grad:
                x.grad += g @ w.data.T
            if w.requires_grad:
                w.grad += x.data.T @ g

        return self._record(x.data @ w.data, (x, w), back)

    def add_bias(self, x, b):
        if b.shape != (1, x.cols):
            raise ShapeError(f"bias {b.shape} does not match {x.shape}")

        def back(g):
            if x.requires_grad:
                x.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0, keepdims=True)

        return self._record(x.data + b.data, (x, b), back)

    def linear(self, x, w, b):
        return self.add_bias(self.matmul(x, w), b)

    def add(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"cannot add {a.shape} and {b.shape}")

        def back(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g

        return self._record(a.data + b.data, (a, b), back)

    def one_plus_scale(self, x, eps):
        """(1 + eps) * x with a (1, 1) scalar tensor ``eps``."""

        def back(g):
            if x.requires_grad:
                x.grad += g * (1.0 + eps.data[0, 0])
            if eps.requires_grad:
                eps.grad += np.sum(g * x.data)

        return self._record(x.data * (1.0 + eps.data[0, 0]), (x, eps), back)

    def relu(self, x):
        mask = x.data > 0

        def back(g):
            if x.requires_grad:
                x.grad += g * mask

        return self._record(x.data * mask, (x,), back)

    def dropout(self, x, p):
        if not self.train or p == 0.0:
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability must be in [0, 1), got {p}")
            return x
        mask = dropout_mask(x.shape, p, self.rng).astype(x.data.dtype)

        def back(g):
            if x.requires_grad:
                x.grad += g * mask

        return self._record(x.data * mask, (x,), back)

    def concat(self, parts):
        rows = {p.rows for p in parts}
        if len(rows) != 1:
            raise ShapeError("concat needs equal row counts")
        widths = np.cumsum([0] + [p.cols for p in parts])

        def back(g):
            for p, lo, hi in zip(parts, widths[:-1], widths[1:]):
                if p.requires_grad:
                    p.grad += g[:, lo:hi]

        return self._record(np.concatenate([p.data for p in parts], axis=1), parts, back)

    def l2_normalize(self, x):
        norm = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
        safe = np.maximum(norm, _NORM_EPS)
        y = x.data / safe

        def back(g):
            if x.requires_grad:
                proj = (g * y).sum(axis=1, keepdims=True)
                x.grad += np.where(norm > _NORM_EPS, (g - y * proj) / safe, g / safe)

        return self._record(y, (x,), back)

    # -- graph ops -----------------------------------------------------------

    def scatter_sum(self, x, edge_index):
        src, dst = _edges(edge_index, x.rows, x.rows)
        out = np.zeros_like(x.data)
        np.add.at(out, dst, x.data[src])

        def back(g):
            if x.requires_grad:
                np.add.at(x.grad, src, g[dst])

        return self._record(out, (x,), back)

    def scatter_mean(self, x, edge_index):
        src, dst = _edges(edge_index, x.rows, x.rows)
        deg = np.maximum(np.bincount(dst, minlength=x.rows), 1).astype(x.data.dtype)
        out = np.zeros_like(x.data)
        np.add.at(out, dst, x.data[src])
        out /= deg[:, None]

        def back(g):
            if x.requires_grad:
                np.add.at(x.grad, src, (g / deg[:, None])[dst])

        return self._record(out, (x,), back)

    def scatter_max(self, x, edge_index):
        out, arg = _scatter_max_with_arg(x.data, edge_index, x.rows)

        def back(g):
            if x.requires_grad:
                rows, cols = np.nonzero(arg >= 0)
                np.add.at(x.grad, (arg[rows, cols], cols), g[rows, cols])

        return self._record(out, (x,), back)

    def pool_sum(self, x, graph_index, num_graphs):
        gi = _check_index(graph_index, num_graphs, "graph")
        out = np.zeros((num_graphs, x.cols), dtype=x.data.dtype)
        np.add.at(out, gi, x.data)

        def back(g):
            if x.requires_grad:
                x.grad += g[gi]

        return self._record(out, (x,), back)

    def pool_max(self, x, graph_index, num_graphs):
        gi = _check_index(graph_index, num_graphs, "graph")
        out, arg = _segment_max(x.data, gi, num_graphs)

        def back(g):
            if x.requires_grad:
                rows, cols = np.nonzero(arg >= 0)
                np.add.at(x.grad, (arg[rows, cols], cols), g[rows, cols])

        return self._record(out, (x,), back)

    # -- loss ------------------------------------------------------------------

    def softmax_cross_entropy(self, logits, labels):
        """Returns (scalar loss tensor, probabilities)."""
        loss, probs = softmax_cross_entropy(logits.data, labels)
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)

        def back(g):
            if logits.requires_grad:
                d = probs.copy()
                d[np.arange(n), labels] -= 1.0
                logits.grad += g[0, 0] * d / n

        return self._record(np.array([[loss]], dtype=logits.data.dtype), (logits,), back), probs
