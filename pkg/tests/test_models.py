import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgraph.graph_data import make_graph
from fairgraph.models import ModelConfig, build_model, make_batch, selected_depth
from fairgraph.neural import Optimizer, Tape

CONFIGS = {
    "baseline_fingerprint": ModelConfig("baseline_fingerprint", hidden_units=6),
    "baseline_deepsets": ModelConfig("baseline_deepsets", hidden_units=6),
    "gin": ModelConfig("gin", layers=2, hidden_units=5, epsilon_trainable=True),
    "graphsage_sum": ModelConfig("graphsage", layers=2, hidden_units=5, aggregation="sum"),
    "graphsage_mean": ModelConfig("graphsage", layers=2, hidden_units=5, aggregation="mean"),
    "graphsage_max": ModelConfig("graphsage", layers=2, hidden_units=5, aggregation="max"),
}


def feats(graphs, width=3, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(g.node_count, width)) for g in graphs]


def batch_of(graphs, features):
    return make_batch(features, graphs, list(range(len(graphs))))


def loss_of(model, batch):
    t = Tape(train=False)
    return t.softmax_cross_entropy(model.forward(t, batch), batch.labels)[0].data[0, 0]


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_gradients_match_finite_differences(name, micro_graphs):
    model = build_model(CONFIGS[name], 3, 2, init_seed=4)
    # nonzero biases and eps so every parameter path is exercised
    rng = np.random.default_rng(1)
    for pname, p in model.params:
        if p.data.shape[0] == 1:
            p.data[:] = rng.normal(scale=0.3, size=p.data.shape)
    batch = batch_of(micro_graphs, feats(micro_graphs))
    t = Tape(train=False)
    loss, _ = t.softmax_cross_entropy(model.forward(t, batch), batch.labels)
    model.params.zero_grad()
    t.backward(loss)
    h = 1e-5
    for pname, p in model.params:
        numeric = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            old = p.data[idx]
            p.data[idx] = old + h
            up = loss_of(model, batch)
            p.data[idx] = old - h
            down = loss_of(model, batch)
            p.data[idx] = old
            numeric[idx] = (up - down) / (2 * h)
        scale = np.maximum(np.abs(numeric), np.abs(p.grad))
        assert np.all(np.abs(numeric - p.grad) <= 1e-4 * scale + 1e-9), pname


@pytest.mark.parametrize("name", ["baseline_fingerprint", "baseline_deepsets"])
def test_baselines_are_edge_blind(name, micro_graphs):
    model = build_model(CONFIGS[name], 3, 2, init_seed=2)
    f = feats(micro_graphs)
    with_edges = model.logits(batch_of(micro_graphs, f))
    no_edges = model.logits(batch_of([g.without_edges() for g in micro_graphs], f))
    assert np.array_equal(with_edges, no_edges)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), name=st.sampled_from(sorted(CONFIGS)))
def test_permutation_invariance(seed, name):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    g = make_graph(n, edges, 0)
    perm = rng.permutation(n)
    x = rng.normal(size=(n, 3))
    model = build_model(CONFIGS[name], 3, 3, init_seed=seed % 1000)
    a = model.logits(batch_of([g], [x]))
    b = model.logits(batch_of([g.permuted(perm)], [x[perm]]))
    assert np.max(np.abs(a - b)) <= 1e-9


def test_fingerprint_pools_atom_counts():
    g = make_graph(4, [(0, 1), (1, 2), (2, 3)], 0)
    x = np.eye(3)[[0, 1, 1, 2]]
    model = build_model(CONFIGS["baseline_fingerprint"], 3, 2)
    W = model.params["hidden.W"].data
    expected_hidden = np.maximum(np.array([[1.0, 2.0, 1.0]]) @ W, 0)
    out = expected_hidden @ model.params["out.W"].data + model.params["out.b"].data
    np.testing.assert_allclose(model.logits(batch_of([g], [x])), out, atol=1e-12)


def test_deepsets_zero_features_closed_form():
    model = build_model(CONFIGS["baseline_deepsets"], 3, 2, init_seed=3)
    p = {n: t.data for n, t in model.params}
    p["node.b"][:] = np.linspace(-0.2, 0.5, 6)
    p["hidden.b"][:] = 0.1
    for n in (1, 4):
        g = make_graph(n, [], 0)
        got = model.logits(batch_of([g], [np.zeros((n, 3))]))
        pooled = n * np.maximum(p["node.b"], 0)
        hidden = np.maximum(pooled @ p["hidden.W"] + p["hidden.b"], 0)
        np.testing.assert_allclose(got, hidden @ p["out.W"] + p["out.b"], atol=1e-12)


def test_empty_graph_rejected():
    model = build_model(CONFIGS["baseline_fingerprint"], 3, 2)
    with pytest.raises(ValueError, match="empty graph"):
        model.logits(batch_of([make_graph(0, [], 0)], [np.zeros((0, 3))]))


def gin_layer_embeddings(model, x, edges):
    """Node embeddings after GIN layer 0 computed by hand."""
    p = {n: t.data for n, t in model.params}
    n = x.shape[0]
    agg = np.zeros_like(x)
    for i, j in edges:
        agg[i] += x[j]
        agg[j] += x[i]
    eps = p.get("gin0.eps", np.zeros((1, 1)))[0, 0]
    u = np.maximum(((1 + eps) * x + agg) @ p["gin0.mlp0.W"] + p["gin0.mlp0.b"], 0)
    return np.maximum(u @ p["gin0.mlp1.W"] + p["gin0.mlp1.b"], 0), n


def test_gin_isolated_node_is_mlp_of_input():
    cfg = ModelConfig("gin", layers=1, hidden_units=4)
    model = build_model(cfg, 3, 2, init_seed=7)
    x = np.array([[0.3, -1.0, 2.0]])
    h, _ = gin_layer_embeddings(model, x, [])
    p = {n: t.data for n, t in model.params}
    readout = np.concatenate([x, h], axis=1)
    expected = readout @ p["out.W"] + p["out.b"]
    np.testing.assert_allclose(model.logits(batch_of([make_graph(1, [], 0)], [x])), expected, atol=1e-12)


def test_gin_triangle_nodes_share_embedding(triangle):
    cfg = ModelConfig("gin", layers=1, hidden_units=4, epsilon_trainable=True)
    model = build_model(cfg, 2, 2, init_seed=1)
    model.params["gin0.eps"].data[:] = 0.25
    x = np.tile([[0.5, -0.2]], (3, 1))
    h, _ = gin_layer_embeddings(model, x, triangle.edges)
    assert np.allclose(h, h[0])
    p = {n: t.data for n, t in model.params}
    single = np.maximum(np.maximum((1.25 + 2) * x[:1] @ p["gin0.mlp0.W"] + p["gin0.mlp0.b"], 0)
                        @ p["gin0.mlp1.W"] + p["gin0.mlp1.b"], 0)
    np.testing.assert_allclose(h[0:1], single, atol=1e-12)
    readout = np.concatenate([x.sum(0, keepdims=True), h.sum(0, keepdims=True)], axis=1)
    np.testing.assert_allclose(model.logits(batch_of([triangle], [x])),
                               readout @ p["out.W"] + p["out.b"], atol=1e-12)


def test_graphsage_single_node_mean():
    cfg = ModelConfig("graphsage", layers=1, hidden_units=4, aggregation="mean")
    model = build_model(cfg, 3, 2, init_seed=5)
    p = {n: t.data for n, t in model.params}
    x = np.array([[1.0, 2.0, -0.5]])
    h = np.maximum(np.concatenate([x, np.zeros_like(x)], axis=1) @ p["sage0.W"] + p["sage0.b"], 0)
    h = h / max(np.linalg.norm(h), 1e-12)
    np.testing.assert_allclose(model.logits(batch_of([make_graph(1, [], 0)], [x])),
                               h @ p["out.W"] + p["out.b"], atol=1e-12)


def test_graphsage_star_max_aggregate():
    from fairgraph.neural import scatter_max

    star = make_graph(4, [(0, 1), (0, 2), (0, 3)], 0)
    x = np.array([[5.0, 5.0], [0.2, -0.7], [0.2, -0.7], [0.2, -0.7]])
    assert scatter_max(x, star.edge_index)[0].tolist() == [0.2, -0.7]


def test_graphsage_batch_order_invariance(micro_graphs):
    model = build_model(CONFIGS["graphsage_max"], 3, 2, init_seed=9)
    f = feats(micro_graphs)
    a = model.logits(batch_of(micro_graphs, f))
    order = [2, 0, 1]
    b = model.logits(batch_of([micro_graphs[i] for i in order], [f[i] for i in order]))
    np.testing.assert_allclose(b, a[order], atol=1e-12)


@pytest.mark.parametrize("layers,expected", [
    ([3, 3, 4, 3, 3, 3, 3, 4, 3, 3], 3), ([3, 4], 3.5), ([2], 2)])
def test_selected_depth(layers, expected):
    got = selected_depth(layers)
    assert got == expected and type(got) is type(expected)


def test_selected_depth_empty():
    with pytest.raises(ValueError):
        selected_depth([])


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig("gin", layers=0)
    with pytest.raises(ValueError):
        ModelConfig("gin", aggregation="sum")
    with pytest.raises(ValueError):
        ModelConfig("graphsage")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"model_kind": "gin", "colour": 1})
    cfg = ModelConfig("graphsage", aggregation="max", layers=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def train_full_batch(model, graphs, x, epochs, lr=0.01):
    opt = Optimizer(model.params, model.config.with_(learning_rate=lr).optim)
    batch = batch_of(graphs, x)
    for _ in range(epochs):
        t = Tape(train=True, rng=np.random.default_rng(0))
        loss, _ = t.softmax_cross_entropy(model.forward(t, batch), batch.labels)
        model.params.zero_grad()
        t.backward(loss)
        opt.step()
    return model.logits(batch)


def test_gin_separates_what_baselines_cannot():
    # triangle plus isolated node vs path on four nodes, constant features
    a = make_graph(4, [(0, 1), (1, 2), (0, 2)], 0)
    b = make_graph(4, [(0, 1), (1, 2), (2, 3)], 1)
    x = [np.ones((4, 1)), np.ones((4, 1))]
    for kind in ("baseline_fingerprint", "baseline_deepsets"):
        model = build_model(ModelConfig(kind, hidden_units=8), 1, 2, init_seed=0)
        untrained = model.logits(batch_of([a, b], x))
        assert np.array_equal(untrained[0], untrained[1])
        trained = train_full_batch(model, [a, b], x, 50)
        assert np.array_equal(trained[0], trained[1])
    gin = build_model(ModelConfig("gin", layers=2, hidden_units=8), 1, 2, init_seed=0)
    logits = train_full_batch(gin, [a, b], x, 200)
    assert logits.argmax(axis=1).tolist() == [0, 1]


def test_float32_mode_runs(micro_graphs):
    model = build_model(CONFIGS["gin"], 3, 2, dtype=np.float32)
    batch = make_batch(feats(micro_graphs), micro_graphs, [0, 1, 2], dtype=np.float32)
    assert model.logits(batch).dtype == np.float32
