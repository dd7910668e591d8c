import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgraph.neural import (
    OptimState,
    Optimizer,
    ParamSet,
    ShapeError,
    Tape,
    Tensor,
    dropout_mask,
    graph_pool_max,
    graph_pool_sum,
    load_checkpoint,
    relu,
    save_checkpoint,
    scatter_max,
    scatter_mean,
    scatter_sum,
    softmax_cross_entropy,
)

TRIANGLE = np.array([[0, 1, 1, 2, 0, 2], [1, 0, 2, 1, 2, 0]])


def central_difference(f, arr, h=1e-5):
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    assert np.all(err <= rtol * scale + atol), np.max(err / np.maximum(scale, 1e-12))


def test_relu_values():
    assert relu([-1.0, 0.0, 2.0]).tolist() == [0.0, 0.0, 2.0]


def test_uniform_softmax_cross_entropy():
    loss, probs = softmax_cross_entropy(np.zeros((3, 4)), [0, 3, 2])
    assert loss == pytest.approx(math.log(4), abs=1e-15)
    assert np.all(probs == 0.25)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    _, probs = softmax_cross_entropy(rng.normal(scale=20, size=(5, 7)), rng.integers(0, 7, 5))
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-12)


def test_softmax_rejects_bad_input():
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 3)), [0])
    with pytest.raises(FloatingPointError):
        softmax_cross_entropy(np.array([[np.nan, 0.0]]), [0])


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    rng = np.random.default_rng(0)
    assert Tape(train=True, rng=rng).dropout(x, 0.0) is x
    assert Tape(train=False, rng=rng).dropout(x, 0.7) is x
    with pytest.raises(ValueError):
        dropout_mask((2, 2), 1.0, rng)


def test_dropout_scales_kept_units():
    mask = dropout_mask((1000, 10), 0.25, np.random.default_rng(1))
    assert set(np.unique(mask)) <= {0.0, 1 / 0.75}
    assert abs(mask.mean() - 1.0) < 0.05


def test_linear_shape_mismatch():
    t = Tape()
    with pytest.raises(ShapeError):
        t.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_without_forward():
    with pytest.raises(RuntimeError):
        Tape().backward(Tensor(np.ones((1, 1))))


def test_bias_gradient_is_probs_minus_one_hot():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 4)))
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    t = Tape()
    loss, probs = t.softmax_cross_entropy(t.linear(x, w, b), [2])
    t.backward(loss)
    np.testing.assert_allclose(b.grad, probs - np.eye(3)[[2]], atol=1e-15)


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(42)
    x = Tensor(rng.normal(size=(5, 4)))
    labels = rng.integers(0, 3, 5)
    params = ParamSet(init_seed=1)
    w1, b1 = params.glorot("w1", 4, 6), params.add("b1", rng.normal(size=(1, 6)), decay=False)
    w2, b2 = params.glorot("w2", 6, 3), params.add("b2", rng.normal(size=(1, 3)), decay=False)

    def loss():
        t = Tape()
        h = t.relu(t.linear(x, w1, b1))
        return t.softmax_cross_entropy(t.linear(h, w2, b2), labels)[0].data[0, 0]

    t = Tape()
    h = t.relu(t.linear(x, w1, b1))
    out, _ = t.softmax_cross_entropy(t.linear(h, w2, b2), labels)
    t.backward(out)
    for _, p in params:
        assert_grad_close(p.grad, central_difference(loss, p.data))


def test_zero_input_gives_zero_first_layer_gradient():
    x = Tensor(np.zeros((3, 4)))
    params = ParamSet(init_seed=2)
    w1, b1 = params.glorot("w1", 4, 5), params.add("b1", np.full((1, 5), 0.3), decay=False)
    w2, b2 = params.glorot("w2", 5, 2), params.zeros("b2", 1, 2)
    t = Tape()
    loss, _ = t.softmax_cross_entropy(t.linear(t.relu(t.linear(x, w1, b1)), w2, b2), [0, 1, 1])
    t.backward(loss)
    assert np.all(w1.grad == 0.0)


@pytest.mark.parametrize("op", ["scatter_sum", "scatter_mean", "scatter_max", "l2_normalize",
                                "pool_sum", "pool_max", "concat", "one_plus_scale"])
def test_graph_ops_match_finite_differences(op):
    rng = np.random.default_rng(7)
    edges = np.array([[0, 1, 1, 2, 3, 2, 0, 4], [1, 0, 2, 1, 2, 3, 4, 0]])
    gidx = np.array([0, 0, 1, 1, 1])
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    eps = Tensor(np.array([[0.3]]), requires_grad=True)
    proj = rng.normal(size=(6, 1)) if op == "concat" else rng.normal(size=(3, 1))

    def forward(t):
        if op == "pool_sum":
            y = t.pool_sum(x, gidx, 2)
        elif op == "pool_max":
            y = t.pool_max(x, gidx, 2)
        elif op == "concat":
            y = t.concat([x, t.relu(x)])
        elif op == "one_plus_scale":
            y = t.one_plus_scale(x, eps)
        elif op == "l2_normalize":
            y = t.l2_normalize(x)
        else:
            y = getattr(t, op)(x, edges)
        return t.matmul(y, Tensor(proj))

    def scalar():
        t = Tape()
        return float((forward(t).data ** 2).sum())

    t = Tape()
    y = forward(t)
    # L = sum(y^2), so the seed gradient is 2y
    y.grad = 2 * y.data
    for out, fn in reversed(t._ops):
        fn(out.grad)
    assert_grad_close(x.grad, central_difference(scalar, x.data))
    if op == "one_plus_scale":
        assert_grad_close(eps.grad, central_difference(scalar, eps.data))


def test_scatter_sum_on_triangle_identity():
    out = scatter_sum(np.eye(3), TRIANGLE)
    np.testing.assert_array_equal(out, [[0, 1, 1], [1, 0, 1], [1, 1, 0]])


def test_empty_neighbourhoods_give_zero():
    edges = np.array([[0], [1]])  # node 2 isolated, node 0 has no in-edges
    x = np.array([[1.0, -2.0], [3.0, 4.0], [5.0, 6.0]])
    assert scatter_mean(x, edges)[2].tolist() == [0.0, 0.0]
    assert scatter_max(x, edges)[2].tolist() == [0.0, 0.0]
    assert scatter_max(x, edges)[1].tolist() == [1.0, -2.0]


def test_scatter_max_star():
    edges = np.array([[1, 2, 3], [0, 0, 0]])
    x = np.array([[9.0, 9.0], [0.5, -1.0], [0.5, -1.0], [0.5, -1.0]])
    assert scatter_max(x, edges)[0].tolist() == [0.5, -1.0]


def test_pool_sum_two_graphs_brute_force():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 3))
    gidx = np.array([0, 0, 0, 1, 1, 1, 1])
    expected = np.stack([sum(x[i] for i in range(7) if gidx[i] == g) for g in (0, 1)])
    np.testing.assert_allclose(graph_pool_sum(x, gidx), expected, atol=1e-15)
    expected_max = np.stack([np.max(x[gidx == g], axis=0) for g in (0, 1)])
    np.testing.assert_array_equal(graph_pool_max(x, gidx), expected_max)


def test_index_out_of_range():
    with pytest.raises(IndexError):
        scatter_sum(np.eye(3), np.array([[0], [3]]))
    with pytest.raises(IndexError):
        graph_pool_sum(np.eye(3), [0, 1, 2], num_graphs=2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_scatter_equivariance_and_pool_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 6
    mask = np.triu(rng.random((n, n)) < 0.5, 1)
    src, dst = np.nonzero(mask)
    edges = np.array([np.r_[src, dst], np.r_[dst, src]])
    x = rng.normal(size=(n, 3))
    perm = rng.permutation(n)  # new node k is old node perm[k]
    inv = np.argsort(perm)
    pedges = inv[edges]
    for fn in (scatter_sum, scatter_mean, scatter_max):
        np.testing.assert_allclose(fn(x[perm], pedges), fn(x, edges)[perm], atol=1e-12)
    gidx = np.zeros(n, dtype=int)
    for fn in (graph_pool_sum, graph_pool_max):
        np.testing.assert_allclose(fn(x[perm], gidx), fn(x, gidx), atol=1e-12)


# -- optimizers -------------------------------------------------------------


def one_param(value):
    ps = ParamSet()
    ps.add("w", np.array([[value]]))
    return ps


def test_adam_zero_gradient_no_change():
    ps = one_param(1.5)
    opt = Optimizer(ps, OptimState("adam", learning_rate=0.1))
    for _ in range(3):
        ps.zero_grad()
        opt.step()
    assert ps["w"].data[0, 0] == 1.5


def test_sgd_exact_step():
    ps = one_param(1.0)
    opt = Optimizer(ps, OptimState("sgd", learning_rate=0.1))
    ps["w"].grad[:] = 0.3
    opt.step()
    assert ps["w"].data[0, 0] == 1.0 - 0.1 * 0.3


def test_adam_first_step_is_lr_sized():
    ps = one_param(0.0)
    opt = Optimizer(ps, OptimState("adam", learning_rate=0.01))
    ps["w"].grad[:] = 5.0
    opt.step()
    # bias-corrected first step moves by lr * g / (|g| + eps)
    assert ps["w"].data[0, 0] == pytest.approx(-0.01, rel=1e-6)


def test_l2_added_to_weights_not_biases():
    ps = ParamSet()
    ps.add("w", np.array([[2.0]]))
    ps.add("b", np.array([[2.0]]), decay=False)
    opt = Optimizer(ps, OptimState("sgd", learning_rate=0.1, l2=0.5))
    ps.zero_grad()
    opt.step()
    assert ps["w"].data[0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert ps["b"].data[0, 0] == 2.0


def test_step_lr_schedule():
    st_ = OptimState("adam", learning_rate=0.01, scheduler="step_lr", step_size=50, gamma=0.5)
    assert st_.lr_at(0) == 0.01
    assert st_.lr_at(49) == 0.01
    assert st_.lr_at(50) == 0.005
    assert st_.lr_at(100) == pytest.approx(0.25 * 0.01)


def test_optimizer_rejects_non_finite_gradient():
    ps = one_param(1.0)
    ps["w"].grad[:] = np.inf
    with pytest.raises(FloatingPointError):
        Optimizer(ps, OptimState()).step()


def test_optim_state_invariants():
    with pytest.raises(ValueError):
        OptimState(learning_rate=0.0)
    with pytest.raises(ValueError):
        OptimState(gamma=1.5)


def test_checkpoint_round_trip(tmp_path):
    ps = ParamSet(init_seed=3)
    ps.glorot("a.W", 3, 4)
    ps.zeros("a.b", 1, 4)
    save_checkpoint(ps, tmp_path / "ck.bin")
    state = load_checkpoint(tmp_path / "ck.bin")
    assert list(state) == ["a.W", "a.b"]
    for name, t in ps:
        np.testing.assert_array_equal(state[name], t.data)
    fresh = ParamSet(init_seed=99)
    fresh.glorot("a.W", 3, 4)
    fresh.zeros("a.b", 1, 4)
    fresh.load_state(state)
    np.testing.assert_array_equal(fresh["a.W"].data, ps["a.W"].data)


def test_glorot_is_seeded_and_bounded():
    a, b = ParamSet(init_seed=5), ParamSet(init_seed=5)
    wa, wb = a.glorot("w", 10, 20), b.glorot("w", 10, 20)
    np.testing.assert_array_equal(wa.data, wb.data)
    assert np.abs(wa.data).max() <= math.sqrt(6 / 30)


def test_scatter_max_without_edges():
    t = Tape()
    x = Tensor(np.ones((3, 2)), requires_grad=True)
    y = t.scatter_max(x, np.zeros((2, 0), dtype=np.int64))
    assert np.all(y.data == 0.0)
    y.grad = np.ones_like(y.data)
    for out, fn in reversed(t._ops):
        fn(out.grad)
    assert np.all(x.grad == 0.0)
