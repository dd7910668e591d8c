import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from fairgraph.features import FeatureError, FeatureSpec, build_features
from fairgraph.graph_data import from_graphs, make_graph, parse_tu_dataset


def test_triangle_degree(triangle):
    fds = build_features(from_graphs("T", [triangle]), FeatureSpec("degree"))
    assert fds.features[0].tolist() == [[2.0], [2.0], [2.0]]


def test_uninformative_is_a_column_of_ones(balanced_dataset):
    fds = build_features(balanced_dataset, FeatureSpec("uninformative"))
    assert fds.width == 1
    for g, x in zip(balanced_dataset.graphs, fds.features):
        assert x.shape == (g.node_count, 1)
        assert (x == 1.0).all()


def test_one_hot_labels_on_a_path():
    g = make_graph(4, [(0, 1), (1, 2), (2, 3)], 0, node_labels=[0, 1, 1, 2])
    fds = build_features(from_graphs("P", [g]), FeatureSpec("one_hot_label"))
    assert fds.features[0].tolist() == np.eye(3)[[0, 1, 1, 2]].tolist()


def test_one_hot_rows_sum_to_one_and_degree_sums_to_twice_edges():
    ds = parse_tu_dataset(FIXTURES, "MINI_CHEM")
    onehot = build_features(ds, FeatureSpec("one_hot_label"))
    assert onehot.width == 5
    degree = build_features(ds, FeatureSpec("degree"))
    for g, x, d in zip(ds.graphs, onehot.features, degree.features):
        assert (x.sum(axis=1) == 1.0).all()
        assert d.sum() == 2 * g.edge_count


def test_degree_one_hot_and_overflow(triangle):
    ds = from_graphs("T", [triangle])
    fds = build_features(ds, FeatureSpec("degree_one_hot", max_degree=3))
    assert fds.width == 4
    assert fds.features[0].tolist() == [[0, 0, 1, 0]] * 3
    with pytest.raises(FeatureError, match="exceeds max_degree"):
        build_features(ds, FeatureSpec("degree_one_hot", max_degree=1))


def test_normalized_degree(triangle):
    path = make_graph(3, [(0, 1), (1, 2)], 1)
    fds = build_features(from_graphs("T", [triangle, path]),
                         FeatureSpec("degree", normalize_degree=True))
    assert fds.features[1].ravel().tolist() == [0.5, 1.0, 0.5]


def test_enzymes_style_modes():
    ds = parse_tu_dataset(FIXTURES, "MINI_ENZ")
    attrs = build_features(ds, FeatureSpec("attributes"))
    both = build_features(ds, FeatureSpec("attributes_plus_label"))
    assert attrs.width == 18
    assert both.width == 18 + 3
    for a, b in zip(attrs.features, both.features):
        np.testing.assert_array_equal(b[:, :18], a)
        assert (b[:, 18:].sum(axis=1) == 1).all()


@pytest.mark.parametrize("mode", ["one_hot_label", "attributes", "attributes_plus_label"])
def test_incompatible_modes(mode):
    ds = parse_tu_dataset(FIXTURES, "MINI_SOCIAL")
    with pytest.raises(FeatureError):
        build_features(ds, FeatureSpec(mode))


def test_unknown_mode():
    with pytest.raises(FeatureError):
        FeatureSpec("clustering")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), mode=st.sampled_from(["degree", "one_hot_label", "uninformative"]))
def test_featurization_is_permutation_equivariant(seed, mode):
    ds = parse_tu_dataset(FIXTURES, "MINI_CHEM")
    rng = np.random.default_rng(seed)
    g = ds.graphs[int(rng.integers(len(ds)))]
    perm = rng.permutation(g.node_count)
    both = from_graphs("P", [g, g.permuted(perm)])
    fds = build_features(both, FeatureSpec(mode))
    np.testing.assert_array_equal(fds.features[1], fds.features[0][perm])
