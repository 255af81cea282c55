"""
Tests for residual-graph connectivity and the random bipartite graph bound
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import DimensionMismatchError
from observability import (BipartiteResidualGraph, UnionFind, connectivity, connectivity_probability,
                           edges_for_offset, monte_carlo_connectivity, offset_for_edges)


def test_union_find_labels_by_smallest_member():
    uf = UnionFind(5)
    uf.union(3, 4)
    uf.union(4, 1)
    assert uf.count == 3
    np.testing.assert_array_equal(uf.labels(), [0, 1, 2, 1, 1])
    assert not uf.union(1, 3)


def test_hand_built_graph_components():
    graph = BipartiteResidualGraph(2, 2, [[0, 0], [1, 1]])
    report = connectivity(graph)
    assert report.n_components == 2
    np.testing.assert_array_equal(report.labels, [0, 1, 0, 1])
    assert not report.connected
    assert report.largest_fraction == pytest.approx(0.5)


def test_isolated_nodes_are_own_components():
    report = connectivity(BipartiteResidualGraph(3, 2, [[0, 0], [1, 0], [1, 1]]))
    assert report.n_components == 2
    assert report.largest == 4


def test_edges_outside_graph_rejected():
    with pytest.raises(DimensionMismatchError):
        BipartiteResidualGraph(2, 2, [[0, 2]])


def test_from_samples_drops_unobserved_nodes():
    graph, cell_ids, pixel_ids = BipartiteResidualGraph.from_samples(
        cells=[5, 5, 9], pixels=[2, 2, 7], n_cells=10, n_pixels=8)
    assert (graph.n_a, graph.n_b) == (2, 2)
    assert len(graph.edges) == 2
    np.testing.assert_array_equal(cell_ids, [5, 9])
    np.testing.assert_array_equal(pixel_ids, [2, 7])

    full, _, _ = BipartiteResidualGraph.from_samples([5, 9], [2, 7], 10, 8, observed_only=False)
    assert full.n_nodes == 18


edge_lists = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 5)), min_size=0, max_size=30)


@settings(max_examples=50, deadline=None)
@given(edges=edge_lists, data=st.data())
def test_components_independent_of_edge_order(edges, data):
    shuffled = data.draw(st.permutations(edges))
    a = connectivity(BipartiteResidualGraph(8, 6, np.asarray(edges, dtype=np.int64).reshape(-1, 2)))
    b = connectivity(BipartiteResidualGraph(8, 6, np.asarray(shuffled, dtype=np.int64).reshape(-1, 2)))
    assert a.n_components == b.n_components
    np.testing.assert_array_equal(a.labels, b.labels)


def test_connectivity_probability_values():
    assert connectivity_probability(0.0) == pytest.approx(math.exp(-2.0))
    assert connectivity_probability(16.18) > 0.999999
    assert connectivity_probability(math.inf) == 1.0
    assert connectivity_probability(-1000.0) == 0.0


def test_edge_count_for_offset():
    assert edges_for_offset(1000, 0.0) == 6907
    assert offset_for_edges(1000, 6907) == pytest.approx(0.0, abs=1e-3)


def test_monte_carlo_independent_of_worker_count():
    one = monte_carlo_connectivity(50, 1.0, trials=40, seed=7, workers=1)
    four = monte_carlo_connectivity(50, 1.0, trials=40, seed=7, workers=4)
    assert one == four


def test_monte_carlo_large_offset_almost_always_connected():
    assert monte_carlo_connectivity(100, 10.0, trials=200, seed=3, workers=2) >= 0.99


def test_monte_carlo_rejects_bad_arguments():
    with pytest.raises(ValueError):
        monte_carlo_connectivity(1, 0.0, trials=10)
    with pytest.raises(ValueError):
        monte_carlo_connectivity(10, 0.0, trials=0)


@pytest.mark.slow
@pytest.mark.parametrize('c', [0.0, 1.0, 2.0])
def test_monte_carlo_matches_asymptotic_bound(c):
    fraction = monte_carlo_connectivity(1000, c, trials=2000, seed=0)
    assert abs(fraction - connectivity_probability(c)) < 0.05
