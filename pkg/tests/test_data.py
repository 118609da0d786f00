import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphcp.data import SplitAssignment, index_of, load_graph, validate_labels, validate_probabilities
from graphcp.errors import DataError

edge_lists = st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), max_size=60)


def test_path_degrees():
    g = load_graph([(0, 1), (1, 2)], symmetrize=True)
    assert g.degrees().tolist() == [1, 2, 1]
    assert g.is_symmetrized


def test_dedup_and_self_loops():
    g = load_graph([(0, 1), (0, 1), (2, 2)])
    assert g.num_nodes == 3
    assert g.edges().tolist() == [[0, 1]]


def test_declared_num_nodes_keeps_isolated():
    g = load_graph([(0, 1)], num_nodes=5)
    assert g.num_nodes == 5 and g.degrees().tolist() == [1, 0, 0, 0, 0]


@pytest.mark.parametrize("bad", [[(0, 1, 2)], [(0, -1)], [("a", 1)], [(0.5, 1)]])
def test_malformed(bad):
    with pytest.raises(DataError):
        load_graph(bad)


def test_id_beyond_declared():
    with pytest.raises(DataError):
        load_graph([(0, 5)], num_nodes=5)


def test_arrays_read_only():
    g = load_graph([(0, 1)])
    with pytest.raises(ValueError):
        g.col_indices[0] = 3


def test_ogbn_arxiv_scale_ingest():
    # dataset sizes of ogbn-arxiv: 169,343 nodes, 1,166,243 edges, 40 classes
    n, m, K = 169_343, 1_166_243, 40
    rng = np.random.default_rng(0)
    e = rng.integers(0, n, size=(m, 2))
    g = load_graph(e, num_nodes=n)
    assert g.num_nodes == n
    assert g.num_edges <= m
    P = validate_probabilities(rng.dirichlet(np.ones(K), size=n).astype(np.float32), K)
    assert P.shape == (n, K)
    y = validate_labels(rng.integers(0, K, n), K)
    assert y.size == n


@given(edge_lists, st.booleans())
def test_csr_invariants(edges, sym):
    g = load_graph(edges, num_nodes=15, symmetrize=sym)
    off, col = g.row_offsets, g.col_indices
    assert off[0] == 0 and off[-1] == col.size
    assert np.all(np.diff(off) >= 0)
    assert np.all(col < g.num_nodes)
    for v in range(g.num_nodes):
        nb = g.neighbors(v)
        assert np.all(np.diff(nb) > 0)  # sorted, unique
        assert v not in nb
    pairs = {tuple(p) for p in g.edges().tolist()}
    expected = {(u, v) for u, v in edges if u != v}
    if sym:
        expected |= {(v, u) for u, v in expected}
        assert all((v, u) in pairs for u, v in pairs)
    assert pairs == expected


@given(edge_lists)
def test_permute_is_relabeling(edges):
    g = load_graph(edges, num_nodes=15, symmetrize=True)
    perm = np.random.default_rng(len(edges)).permutation(15)
    h = g.permute(perm)
    got = {tuple(p) for p in h.edges().tolist()}
    assert got == {(int(perm[u]), int(perm[v])) for u, v in g.edges().tolist()}


def test_probability_tolerance():
    ok = np.array([[0.5, 0.5 + 9e-6], [0.2, 0.8]])
    P = validate_probabilities(ok)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-15)
    with pytest.raises(DataError):
        validate_probabilities(np.array([[0.5, 0.5 + 2e-5]]))


@pytest.mark.parametrize("bad", [np.ones((3, 1)), np.array([[1.2, -0.2]]), np.array([[np.nan, 1.0]]), np.ones(3)])
def test_probability_rejects(bad):
    with pytest.raises(DataError):
        validate_probabilities(bad)


def test_labels():
    assert validate_labels([0, 2, 1], 3).tolist() == [0, 2, 1]
    with pytest.raises(DataError):
        validate_labels([0, 3], 3)
    with pytest.raises(DataError):
        validate_labels([0, -1], 3)
    assert validate_labels([0, -1], 3, allow_missing=True).tolist() == [0, -1]


def test_split_disjoint():
    with pytest.raises(DataError):
        SplitAssignment([0, 1], [1], [2], [3]).validate()
    with pytest.raises(DataError):
        SplitAssignment([0], [1], [], [3]).validate(require_conformal=True)
    with pytest.raises(DataError):
        SplitAssignment([0], [1], [2], [9]).validate(num_nodes=5)
    s = SplitAssignment([0], [1], [2], [3]).validate(4, require_conformal=True)
    assert SplitAssignment.from_dict(s.to_dict()) == s


def test_index_of():
    assert index_of([5, 3, 9], [9, 5]).tolist() == [2, 0]
    with pytest.raises(DataError):
        index_of([5, 3], [4])
